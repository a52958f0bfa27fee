//! Small dense eigen/SVD routines via Jacobi rotations.
//!
//! The matrices involved are at most a few hundred on a side (covariances of
//! code-length dimension, Procrustes problems between code matrices), so
//! cyclic Jacobi converges quickly and keeps results deterministic across
//! platforms. Outputs use a fixed sign convention: each eigen/singular vector
//! is flipped so its largest-magnitude component is positive.

use ndarray::{Array1, Array2};

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix. Returns eigenvalues in
/// descending order and the matching eigenvectors as columns.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen needs a square matrix");
    let mut a = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale = frobenius(&a).max(1.0);

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= 1e-14 * scale {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[[i, p]];
                    let aiq = a[[i, q]];
                    a[[i, p]] = c * aip - s * aiq;
                    a[[i, q]] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let api = a[[p, i]];
                    let aqi = a[[q, i]];
                    a[[p, i]] = c * api - s * aqi;
                    a[[q, i]] = s * api + c * aqi;
                }
                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).unwrap());
    let values = Array1::from_iter(order.iter().map(|&k| a[[k, k]]));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors[[i, dst]] = v[[i, src]];
        }
        fix_column_sign(&mut vectors, dst, None);
    }
    (values, vectors)
}

/// Thin SVD of a square matrix by one-sided Jacobi: a = u * diag(s) * v^T
/// with orthonormal u, v and s sorted descending. Zero singular directions
/// get u columns completed to an orthonormal basis.
pub fn svd_square(a: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "svd_square needs a square matrix");
    let mut u = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let eps = 1e-15;

    for _ in 0..MAX_SWEEPS {
        let mut converged = true;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..n {
                    alpha += u[[i, p]] * u[[i, p]];
                    beta += u[[i, q]] * u[[i, q]];
                    gamma += u[[i, p]] * u[[i, q]];
                }
                if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (zeta * zeta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = c * t;
                for i in 0..n {
                    let uip = u[[i, p]];
                    let uiq = u[[i, q]];
                    u[[i, p]] = c * uip - s * uiq;
                    u[[i, q]] = s * uip + c * uiq;
                }
                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
        if converged {
            break;
        }
    }

    let mut norms: Vec<f64> = (0..n)
        .map(|k| (0..n).map(|i| u[[i, k]] * u[[i, k]]).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut su = Array2::<f64>::zeros((n, n));
    let mut sv = Array2::<f64>::zeros((n, n));
    let mut s = Array1::<f64>::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = norms[src];
        for i in 0..n {
            su[[i, dst]] = u[[i, src]];
            sv[[i, dst]] = v[[i, src]];
        }
    }
    norms.sort_by(|x, y| y.partial_cmp(x).unwrap());

    let tiny = 1e-12 * norms.first().copied().unwrap_or(0.0).max(1.0);
    for k in 0..n {
        if s[k] > tiny {
            for i in 0..n {
                su[[i, k]] /= s[k];
            }
        } else {
            s[k] = 0.0;
            complete_column(&mut su, k);
        }
        fix_column_sign(&mut su, k, Some(&mut sv));
    }
    (su, s, sv)
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[[i, j]] * a[[i, j]];
            }
        }
    }
    sum.sqrt()
}

/// Flip column `k` (and the paired matrix, if any) so the entry with largest
/// magnitude is positive.
fn fix_column_sign(m: &mut Array2<f64>, k: usize, paired: Option<&mut Array2<f64>>) {
    let n = m.nrows();
    let mut best = 0;
    for i in 1..n {
        if m[[i, k]].abs() > m[[best, k]].abs() {
            best = i;
        }
    }
    if m[[best, k]] < 0.0 {
        for i in 0..n {
            m[[i, k]] = -m[[i, k]];
        }
        if let Some(p) = paired {
            for i in 0..p.nrows() {
                p[[i, k]] = -p[[i, k]];
            }
        }
    }
}

/// Replace column `k` of an otherwise-orthonormal matrix with a unit vector
/// orthogonal to all other columns, chosen from the canonical basis.
fn complete_column(m: &mut Array2<f64>, k: usize) {
    let n = m.nrows();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for e in 0..n {
        let mut cand = vec![0.0; n];
        cand[e] = 1.0;
        for c in 0..n {
            if c == k {
                continue;
            }
            let proj: f64 = (0..n).map(|i| cand[i] * m[[i, c]]).sum();
            for (i, x) in cand.iter_mut().enumerate() {
                *x -= proj * m[[i, c]];
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if best.as_ref().map_or(true, |(b, _)| norm > *b) {
            best = Some((norm, cand));
        }
    }
    let (norm, cand) = best.unwrap();
    assert!(norm > 1e-8, "orthonormal completion failed");
    for i in 0..n {
        m[[i, k]] = cand[i] / norm;
    }
}
