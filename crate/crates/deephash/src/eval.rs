//! Bit-packed Hamming ranking and retrieval metrics: recall@R, MAP, UKB
//! score, ROC AUC.
//!
//! Rankings order database items by ascending distance with ties broken by
//! ascending index, which keeps every metric deterministic and reproducible
//! across platforms and thread counts.

use std::path::Path;

use rayon::prelude::*;

use crate::bits::{BitCodeRef, BitMatrix};
use crate::error::{Error, Result};
use crate::io::{atomic_write, PairSet};

/// Per query: the set of relevant database indices, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    relevant: Vec<Vec<u32>>,
    db_size: usize,
}

impl GroundTruth {
    pub fn new(relevant: Vec<Vec<usize>>, db_size: usize) -> Result<Self> {
        let mut sorted = Vec::with_capacity(relevant.len());
        for (q, rel) in relevant.into_iter().enumerate() {
            if rel.is_empty() {
                return Err(Error::invalid(format!("query {q} has no relevant items")));
            }
            let mut rel: Vec<u32> = rel
                .into_iter()
                .map(|i| {
                    if i < db_size {
                        Ok(i as u32)
                    } else {
                        Err(Error::invalid(format!(
                            "query {q}: relevant index {i} >= database size {db_size}"
                        )))
                    }
                })
                .collect::<Result<_>>()?;
            rel.sort_unstable();
            if rel.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("query {q} lists a duplicate item")));
            }
            sorted.push(rel);
        }
        Ok(GroundTruth {
            relevant: sorted,
            db_size,
        })
    }

    pub fn queries(&self) -> usize {
        self.relevant.len()
    }

    pub fn db_size(&self) -> usize {
        self.db_size
    }

    pub fn relevant(&self, query: usize) -> &[u32] {
        &self.relevant[query]
    }

    pub fn is_relevant(&self, query: usize, item: u32) -> bool {
        self.relevant[query].binary_search(&item).is_ok()
    }

    /// Text format, one line per query in index order: "q:rel_1,rel_2,...".
    pub fn load(path: &Path, db_size: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut relevant = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |what: String| Error::TextParse {
                path: path.to_path_buf(),
                line: lineno + 1,
                what,
            };
            let (q, items) = line
                .split_once(':')
                .ok_or_else(|| err("expected \"query:rel_1,rel_2,...\"".into()))?;
            let q: usize = q
                .trim()
                .parse()
                .map_err(|_| err(format!("bad query index {q:?}")))?;
            if q != relevant.len() {
                return Err(err(format!(
                    "query indices must be consecutive from 0; expected {}, found {q}",
                    relevant.len()
                )));
            }
            let rel: Vec<usize> = items
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| err(format!("bad item index {s:?}")))
                })
                .collect::<Result<_>>()?;
            relevant.push(rel);
        }
        GroundTruth::new(relevant, db_size)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = String::new();
        for (q, rel) in self.relevant.iter().enumerate() {
            let items: Vec<String> = rel.iter().map(|i| i.to_string()).collect();
            buf.push_str(&format!("{q}:{}\n", items.join(",")));
        }
        atomic_write(path, buf.as_bytes())
    }
}

/// Per query: all database indices ordered by ascending Hamming distance,
/// ties by ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    order: Vec<Vec<u32>>,
    db_size: usize,
}

impl Ranking {
    pub fn queries(&self) -> usize {
        self.order.len()
    }

    pub fn db_size(&self) -> usize {
        self.db_size
    }

    pub fn order(&self, query: usize) -> &[u32] {
        &self.order[query]
    }
}

/// Popcount of the XOR over packed words; widths must match.
pub fn hamming_distance(a: BitCodeRef, b: BitCodeRef) -> Result<u32> {
    if a.bits() != b.bits() {
        return Err(Error::DimensionMismatch {
            context: "hamming_distance",
            expected: a.bits(),
            found: b.bits(),
        });
    }
    Ok(a.words()
        .iter()
        .zip(b.words())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum())
}

/// Exhaustive scan, counting sort over the bits+1 possible distances.
/// Parallel over queries with deterministic output.
pub fn rank_all(queries: &BitMatrix, database: &BitMatrix) -> Result<Ranking> {
    if queries.bits() != database.bits() {
        return Err(Error::DimensionMismatch {
            context: "rank_all",
            expected: database.bits(),
            found: queries.bits(),
        });
    }
    let n = database.rows();
    let buckets = database.bits() + 1;
    let order: Vec<Vec<u32>> = (0..queries.rows())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            let mut dist = vec![0u32; n];
            let mut counts = vec![0u32; buckets + 1];
            for (i, d) in dist.iter_mut().enumerate() {
                *d = hamming_distance(q, database.row(i)).expect("widths checked");
                counts[*d as usize + 1] += 1;
            }
            for k in 1..counts.len() {
                counts[k] += counts[k - 1];
            }
            let mut out = vec![0u32; n];
            for (i, &d) in dist.iter().enumerate() {
                out[counts[d as usize] as usize] = i as u32;
                counts[d as usize] += 1;
            }
            out
        })
        .collect();
    Ok(Ranking { order, db_size: n })
}

/// Ranking from per-query distance lists (ADC retrieval and the like):
/// ascending score, ties by ascending index.
pub fn rank_by_scores(scores: &[Vec<f64>], db_size: usize) -> Result<Ranking> {
    for row in scores {
        if row.len() != db_size {
            return Err(Error::DimensionMismatch {
                context: "rank_by_scores",
                expected: db_size,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
    }
    let order: Vec<Vec<u32>> = scores
        .par_iter()
        .map(|row| {
            let mut idx: Vec<u32> = (0..db_size as u32).collect();
            idx.sort_unstable_by(|&a, &b| {
                row[a as usize]
                    .partial_cmp(&row[b as usize])
                    .expect("scores checked finite")
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();
    Ok(Ranking { order, db_size })
}

fn check_compatible(rk: &Ranking, gt: &GroundTruth) -> Result<()> {
    if rk.queries() != gt.queries() {
        return Err(Error::DimensionMismatch {
            context: "ranking vs ground truth queries",
            expected: gt.queries(),
            found: rk.queries(),
        });
    }
    if rk.db_size() != gt.db_size() {
        return Err(Error::DimensionMismatch {
            context: "ranking vs ground truth database",
            expected: gt.db_size(),
            found: rk.db_size(),
        });
    }
    Ok(())
}

/// Fraction of queries with at least one relevant item among the top r.
pub fn recall_at_r(rk: &Ranking, gt: &GroundTruth, r: usize) -> Result<f64> {
    if r == 0 {
        return Err(Error::invalid("recall cutoff r must be >= 1"));
    }
    check_compatible(rk, gt)?;
    let hits = (0..rk.queries())
        .filter(|&q| {
            rk.order(q)
                .iter()
                .take(r)
                .any(|&i| gt.is_relevant(q, i))
        })
        .count();
    Ok(hits as f64 / rk.queries() as f64)
}

/// Standard MAP: per query, mean of precision at each relevant hit over the
/// query's relevant count, averaged over queries.
pub fn mean_average_precision(rk: &Ranking, gt: &GroundTruth) -> Result<f64> {
    check_compatible(rk, gt)?;
    let mut total = 0.0;
    for q in 0..rk.queries() {
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (rank, &i) in rk.order(q).iter().enumerate() {
            if gt.is_relevant(q, i) {
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
            }
        }
        total += precision_sum / gt.relevant(q).len() as f64;
    }
    Ok(total / rk.queries() as f64)
}

/// Mean count of relevant items in the top 4; every query must have exactly
/// 4 relevant items.
pub fn ukb_score(rk: &Ranking, gt: &GroundTruth) -> Result<f64> {
    check_compatible(rk, gt)?;
    for q in 0..gt.queries() {
        if gt.relevant(q).len() != 4 {
            return Err(Error::invalid(format!(
                "ukb_score: query {q} has {} relevant items, expected exactly 4",
                gt.relevant(q).len()
            )));
        }
    }
    let mut total = 0usize;
    for q in 0..rk.queries() {
        total += rk
            .order(q)
            .iter()
            .take(4)
            .filter(|&&i| gt.is_relevant(q, i))
            .count();
    }
    Ok(total as f64 / rk.queries() as f64)
}

/// AUC as the Mann–Whitney statistic: probability that a random matching
/// distance is below a random non-matching one, ties counting one half.
///
/// The division is canonicalized so that
/// roc_auc(a, b) + roc_auc(b, a) == 1.0 holds exactly in floating point.
pub fn roc_auc(match_d: &[f64], nonmatch_d: &[f64]) -> Result<f64> {
    if match_d.is_empty() || nonmatch_d.is_empty() {
        return Err(Error::invalid("roc_auc needs non-empty distance lists"));
    }
    if match_d.iter().chain(nonmatch_d).any(|d| !d.is_finite()) {
        return Err(Error::invalid("roc_auc distances must be finite"));
    }
    let mut nm: Vec<f64> = nonmatch_d.to_vec();
    nm.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut wins = 0u128;
    let mut ties = 0u128;
    for &m in match_d {
        let lo = nm.partition_point(|&x| x < m);
        let hi = nm.partition_point(|&x| x <= m);
        wins += (nm.len() - hi) as u128;
        ties += (hi - lo) as u128;
    }
    let num = 2 * wins + ties;
    let den = 2 * (match_d.len() as u128) * (nonmatch_d.len() as u128);
    Ok(if 2 * num <= den {
        num as f64 / den as f64
    } else {
        1.0 - (den - num) as f64 / den as f64
    })
}

/// ROC curve points over the distinct distance thresholds, classifying
/// d <= threshold as "predicted matching". Starts at (0,0), ends at (1,1).
#[derive(Debug, Clone, PartialEq)]
pub struct RocPoints {
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

pub fn roc_points(match_d: &[f64], nonmatch_d: &[f64]) -> Result<RocPoints> {
    if match_d.is_empty() || nonmatch_d.is_empty() {
        return Err(Error::invalid("roc_points needs non-empty distance lists"));
    }
    let mut all: Vec<f64> = match_d.iter().chain(nonmatch_d).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();
    let mut m = match_d.to_vec();
    let mut n = nonmatch_d.to_vec();
    m.sort_by(|a, b| a.partial_cmp(b).unwrap());
    n.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut thresholds = vec![f64::NEG_INFINITY];
    let mut tpr = vec![0.0];
    let mut fpr = vec![0.0];
    for &t in &all {
        thresholds.push(t);
        tpr.push(m.partition_point(|&x| x <= t) as f64 / m.len() as f64);
        fpr.push(n.partition_point(|&x| x <= t) as f64 / n.len() as f64);
    }
    Ok(RocPoints {
        thresholds,
        tpr,
        fpr,
    })
}

/// Hamming distances of the labeled pairs, split by label with input order
/// preserved inside each list.
pub fn pair_distances(codes: &BitMatrix, pairs: &PairSet) -> Result<(Vec<u32>, Vec<u32>)> {
    let mut matching = Vec::new();
    let mut nonmatching = Vec::new();
    for p in pairs.pairs() {
        if p.a >= codes.rows() || p.b >= codes.rows() {
            return Err(Error::invalid(format!(
                "pair ({}, {}) out of range for {} codes",
                p.a,
                p.b,
                codes.rows()
            )));
        }
        let d = hamming_distance(codes.row(p.a), codes.row(p.b))?;
        if p.matching {
            matching.push(d);
        } else {
            nonmatching.push(d);
        }
    }
    Ok((matching, nonmatching))
}

/// Convenience for feeding Hamming distances into roc_auc.
pub fn to_f64(d: &[u32]) -> Vec<f64> {
    d.iter().map(|&x| x as f64).collect()
}
