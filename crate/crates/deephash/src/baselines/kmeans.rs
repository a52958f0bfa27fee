//! Lloyd's algorithm with k-means++ seeding, used per block by product
//! quantization.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_ITERS: usize = 100;
const REL_TOL: f64 = 1e-4;

pub(crate) struct KmeansResult {
    pub centroids: Array2<f64>,
    #[allow(dead_code)]
    pub assignment: Vec<usize>,
    #[allow(dead_code)]
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(data: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let d = data.ncols();
    let mut centroids = Array2::zeros((k, d));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut best: Vec<f64> = (0..n)
        .map(|i| dist2(data.row(i).as_slice().unwrap(), data.row(first).as_slice().unwrap()))
        .collect();
    for j in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in best.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(j).assign(&data.row(pick));
        for i in 0..n {
            let d2 = dist2(
                data.row(i).as_slice().unwrap(),
                data.row(pick).as_slice().unwrap(),
            );
            if d2 < best[i] {
                best[i] = d2;
            }
        }
    }
    centroids
}

/// Ties in the assignment step go to the lowest centroid index. An empty
/// cluster steals the point farthest from its current centroid, never
/// emptying a singleton.
pub(crate) fn kmeans(
    data: ArrayView2<f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<KmeansResult> {
    let n = data.nrows();
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "k-means needs at least k rows, got {n} rows for k = {k}"
        )));
    }
    let mut centroids = plus_plus_init(data, k, rng);
    let mut assignment = vec![0usize; n];
    let mut point_d2 = vec![0.0f64; n];
    let mut prev_inertia = f64::INFINITY;
    let mut inertia = 0.0;
    for it in 0..MAX_ITERS {
        for i in 0..n {
            let row = data.row(i);
            let row = row.as_slice().unwrap();
            let mut best_j = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..k {
                let d2 = dist2(row, centroids.row(j).as_slice().unwrap());
                if d2 < best_d {
                    best_d = d2;
                    best_j = j;
                }
            }
            assignment[i] = best_j;
            point_d2[i] = best_d;
        }

        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let mut far = usize::MAX;
            let mut far_d = -1.0;
            for i in 0..n {
                if counts[assignment[i]] >= 2 && point_d2[i] > far_d {
                    far_d = point_d2[i];
                    far = i;
                }
            }
            counts[assignment[far]] -= 1;
            assignment[far] = j;
            counts[j] = 1;
            centroids.row_mut(j).assign(&data.row(far));
            point_d2[far] = 0.0;
        }

        inertia = point_d2.iter().sum();
        // Break before touching the means so the returned centroids are the
        // ones the assignment and inertia were measured against.
        let done = inertia == 0.0
            || (prev_inertia.is_finite() && prev_inertia - inertia <= REL_TOL * prev_inertia);
        prev_inertia = inertia;
        if done || it + 1 == MAX_ITERS {
            break;
        }

        for j in 0..k {
            centroids.row_mut(j).fill(0.0);
        }
        for (i, &a) in assignment.iter().enumerate() {
            let row = data.row(i);
            let mut c = centroids.row_mut(a);
            c += &row;
        }
        for j in 0..k {
            let mut c = centroids.row_mut(j);
            c /= counts[j] as f64;
        }
    }
    Ok(KmeansResult {
        centroids,
        assignment,
        inertia,
    })
}
