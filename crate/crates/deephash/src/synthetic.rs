//! Deterministic synthetic corpora: Gaussian clusters with a query/database
//! split, same-cluster ground truth, and labeled pair sampling. Shared by the
//! integration tests and the runnable examples.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::io::{FeatureMatrix, Pair, PairSet};

/// Feature rows plus the cluster id of each row.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
}

/// Isotropic Gaussian clusters: centers drawn N(0, center_spread) per
/// coordinate, items assigned round-robin so clusters stay balanced, each
/// item = its center + N(0, cluster_std) noise.
pub fn gaussian_clusters(
    items: usize,
    dim: usize,
    clusters: usize,
    center_spread: f64,
    cluster_std: f64,
    seed: u64,
) -> Result<SyntheticCorpus> {
    if items == 0 || dim == 0 || clusters == 0 {
        return Err(Error::invalid("items, dim, clusters must all be >= 1"));
    }
    if center_spread <= 0.0 || cluster_std < 0.0 {
        return Err(Error::invalid(
            "center_spread must be > 0 and cluster_std >= 0",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = Normal::new(0.0, center_spread).expect("valid normal");
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..dim).map(|_| spread.sample(&mut rng)).collect())
        .collect();
    let noise = Normal::new(0.0, cluster_std.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut values = Vec::with_capacity(items * dim);
    let mut labels = Vec::with_capacity(items);
    for i in 0..items {
        let label = i % clusters;
        labels.push(label);
        for d in 0..dim {
            let x = centers[label][d]
                + if cluster_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
            values.push(x as f32);
        }
    }
    Ok(SyntheticCorpus {
        features: FeatureMatrix::new(items, dim, values)?,
        labels,
    })
}

/// Query/database split of a corpus with same-cluster ground truth.
#[derive(Debug, Clone)]
pub struct RetrievalTask {
    pub queries: FeatureMatrix,
    pub database: FeatureMatrix,
    pub query_labels: Vec<usize>,
    pub db_labels: Vec<usize>,
    pub ground_truth: GroundTruth,
}

/// Shuffle row indices, take the first `n_queries` as queries and the rest
/// as the database. Every query's cluster must survive into the database
/// (guaranteed for balanced clusters and a modest query fraction; verified).
pub fn split_retrieval(corpus: &SyntheticCorpus, n_queries: usize, seed: u64) -> Result<RetrievalTask> {
    let n = corpus.features.rows();
    if n_queries == 0 || n_queries >= n {
        return Err(Error::invalid(format!(
            "n_queries must be in 1..{n} (corpus rows)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let (q_idx, db_idx) = idx.split_at(n_queries);

    let queries = corpus.features.select_rows(q_idx);
    let database = corpus.features.select_rows(db_idx);
    let query_labels: Vec<usize> = q_idx.iter().map(|&i| corpus.labels[i]).collect();
    let db_labels: Vec<usize> = db_idx.iter().map(|&i| corpus.labels[i]).collect();

    let relevant: Vec<Vec<usize>> = query_labels
        .iter()
        .map(|&ql| {
            db_labels
                .iter()
                .enumerate()
                .filter(|(_, &dl)| dl == ql)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    if relevant.iter().any(|r: &Vec<usize>| r.is_empty()) {
        return Err(Error::invalid(
            "a query cluster has no database items; use fewer queries",
        ));
    }
    let ground_truth = GroundTruth::new(relevant, database.rows())?;
    Ok(RetrievalTask {
        queries,
        database,
        query_labels,
        db_labels,
        ground_truth,
    })
}

/// Sample `count` distinct-index matching pairs (same label, a != b),
/// uniformly over clusters then members. Use
/// [`crate::io::expand_with_nonmatching`] to add the non-matching pairs.
pub fn matching_pairs(labels: &[usize], count: usize, seed: u64) -> Result<PairSet> {
    let mut by_label: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let eligible: Vec<&Vec<usize>> = by_label.values().filter(|v| v.len() >= 2).collect();
    if eligible.is_empty() {
        return Err(Error::invalid(
            "no cluster has two members; cannot sample matching pairs",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let members = eligible[rng.random_range(0..eligible.len())];
        let a = members[rng.random_range(0..members.len())];
        let mut b = a;
        while b == a {
            b = members[rng.random_range(0..members.len())];
        }
        pairs.push(Pair {
            a,
            b,
            matching: true,
        });
    }
    PairSet::new(pairs, labels.len())
}
