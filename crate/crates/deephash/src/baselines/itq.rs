//! Iterative quantization: PCA projection followed by alternating
//! minimization of the binary quantization error over rotations.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

use super::{round1, round2};
use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::io::{atomic_write, ByteReader, FeatureMatrix};
use crate::linalg::{svd_square, symmetric_eigen};

pub(crate) const ITQ_MAGIC: [u8; 4] = *b"DHIQ";

/// Eigenvalues this far below the leading one count as zero variance.
const RANK_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ItqModel {
    mean: Array1<f64>,
    pca: Array2<f64>,
    rotation: Array2<f64>,
}

impl ItqModel {
    /// `pca` is dim x bits with principal directions as columns; `rotation`
    /// is bits x bits.
    pub fn from_parts(mean: Array1<f64>, pca: Array2<f64>, rotation: Array2<f64>) -> Result<Self> {
        let dim = mean.len();
        let bits = pca.ncols();
        if dim == 0 || bits == 0 {
            return Err(Error::invalid("mean and pca must be non-empty"));
        }
        if pca.nrows() != dim {
            return Err(Error::DimensionMismatch {
                context: "itq pca rows vs mean",
                expected: dim,
                found: pca.nrows(),
            });
        }
        if rotation.nrows() != bits || rotation.ncols() != bits {
            return Err(Error::DimensionMismatch {
                context: "itq rotation vs pca columns",
                expected: bits,
                found: rotation.nrows().max(rotation.ncols()),
            });
        }
        if mean.iter().any(|v| !v.is_finite())
            || pca.iter().any(|v| !v.is_finite())
            || rotation.iter().any(|v| !v.is_finite())
        {
            return Err(Error::invalid("itq parameters must be finite"));
        }
        Ok(ItqModel {
            mean,
            pca,
            rotation,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn bits(&self) -> usize {
        self.pca.ncols()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn pca(&self) -> &Array2<f64> {
        &self.pca
    }

    pub fn rotation(&self) -> &Array2<f64> {
        &self.rotation
    }
}

fn sign_pm1(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| if v > 0.0 { 1.0 } else { -1.0 })
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let g = Array2::from_shape_fn((n, n), |_| normal.sample(rng));
    let (u, _s, v) = svd_square(&g);
    u.dot(&v.t())
}

/// Train on centered PCA projections. Returns the model and the
/// quantization error after each iteration; the sequence never increases.
/// Asks for more bits than the data has variance directions and you get
/// `RankDeficient` with the achievable count.
pub fn itq_train(
    x: &FeatureMatrix,
    bits: usize,
    iterations: usize,
    seed: u64,
) -> Result<(ItqModel, Vec<f64>)> {
    if bits == 0 {
        return Err(Error::invalid("bits must be >= 1"));
    }
    if iterations == 0 {
        return Err(Error::invalid("iterations must be >= 1"));
    }
    let n = x.rows();
    if n < 2 {
        return Err(Error::RankDeficient {
            requested: bits,
            achievable: 0,
        });
    }
    let xd = x.to_f64_array();
    let mean = xd.mean_axis(Axis(0)).expect("rows checked");
    let xc = &xd - &mean;
    let cov = xc.t().dot(&xc) / n as f64;
    let (eigvals, eigvecs) = symmetric_eigen(&cov);
    let tol = eigvals[0].max(0.0) * RANK_REL_TOL;
    let achievable = eigvals.iter().filter(|&&v| v > tol && v > 0.0).count();
    if achievable < bits {
        return Err(Error::RankDeficient {
            requested: bits,
            achievable,
        });
    }
    let pca = eigvecs.slice(ndarray::s![.., ..bits]).to_owned();
    let v = xc.dot(&pca);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rotation = random_orthogonal(bits, &mut rng);
    let mut errors = Vec::with_capacity(iterations);
    let mut prev = f64::INFINITY;
    for _ in 0..iterations {
        let b = sign_pm1(&v.dot(&rotation));
        let m = b.t().dot(&v);
        let (u, _s, w) = svd_square(&m);
        let candidate = w.dot(&u.t());
        let diff = &b - &v.dot(&candidate);
        let err = diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
        // Alternating minimization cannot increase the objective; if
        // floating point says otherwise, hold the previous state.
        if err > prev {
            errors.push(prev);
        } else {
            rotation = candidate;
            prev = err;
            errors.push(err);
        }
    }

    let model = ItqModel::from_parts(round1(mean), round2(pca), round2(rotation))?;
    Ok((model, errors))
}

/// Bit j of a row is 1 iff its centered, projected, rotated coordinate j
/// is > 0.
pub fn itq_encode(model: &ItqModel, x: &FeatureMatrix) -> Result<BitMatrix> {
    if x.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "itq_encode",
            expected: model.dim(),
            found: x.dim(),
        });
    }
    let z = (&x.to_f64_array() - &model.mean).dot(&model.pca).dot(&model.rotation);
    let mut out = BitMatrix::zeros(x.rows(), model.bits());
    for i in 0..x.rows() {
        for j in 0..model.bits() {
            if z[[i, j]] > 0.0 {
                out.set(i, j, true);
            }
        }
    }
    Ok(out)
}

pub fn save_itq(path: &Path, model: &ItqModel) -> Result<()> {
    let dim = model.dim();
    let bits = model.bits();
    let mut buf = Vec::with_capacity(12 + 4 * (dim + dim * bits + bits * bits));
    buf.extend_from_slice(&ITQ_MAGIC);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(bits as u32).to_le_bytes());
    for v in model.mean.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for v in model.pca.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for v in model.rotation.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    atomic_write(path, &buf)
}

pub fn load_itq(path: &Path) -> Result<ItqModel> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(path, &data);
    r.expect_magic(ITQ_MAGIC)?;
    let dim = r.read_u32()? as usize;
    let bits = r.read_u32()? as usize;
    if dim == 0 || bits == 0 {
        return Err(r.malformed("dim and bits must be >= 1"));
    }
    let mut read_block = |len: usize| -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            v.push(r.read_f32()? as f64);
        }
        Ok(v)
    };
    let mean = Array1::from_vec(read_block(dim)?);
    let pca = Array2::from_shape_vec((dim, bits), read_block(dim * bits)?).expect("sized above");
    let rotation =
        Array2::from_shape_vec((bits, bits), read_block(bits * bits)?).expect("sized above");
    r.finish()?;
    ItqModel::from_parts(mean, pca, rotation)
}
