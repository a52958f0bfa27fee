//! Random hyperplane hashing.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

use super::round2;
use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::io::{atomic_write, ByteReader, FeatureMatrix};

pub(crate) const LSH_MAGIC: [u8; 4] = *b"DHLS";

/// One unit-length Gaussian hyperplane per output bit.
#[derive(Debug, Clone, PartialEq)]
pub struct LshModel {
    projections: Array2<f64>,
}

impl LshModel {
    /// Rows are hyperplanes: `bits` rows of `dim` entries.
    pub fn from_parts(projections: Array2<f64>) -> Result<Self> {
        if projections.nrows() == 0 || projections.ncols() == 0 {
            return Err(Error::invalid("projections must be non-empty"));
        }
        if projections.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("projections must be finite"));
        }
        Ok(LshModel { projections })
    }

    pub fn bits(&self) -> usize {
        self.projections.nrows()
    }

    pub fn dim(&self) -> usize {
        self.projections.ncols()
    }

    pub fn projections(&self) -> &Array2<f64> {
        &self.projections
    }
}

/// iid Gaussian hyperplanes, each normalized to unit length.
pub fn lsh_train(dim: usize, bits: usize, seed: u64) -> Result<LshModel> {
    if dim == 0 || bits == 0 {
        return Err(Error::invalid("dim and bits must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut projections: Array2<f64> = Array2::zeros((bits, dim));
    for j in 0..bits {
        let mut norm = 0.0;
        while norm == 0.0 {
            for v in projections.row_mut(j) {
                *v = normal.sample(&mut rng);
            }
            norm = projections.row(j).dot(&projections.row(j)).sqrt();
        }
        let mut row = projections.row_mut(j);
        row /= norm;
    }
    LshModel::from_parts(round2(projections))
}

/// Bit j of a row is 1 iff its projection onto hyperplane j is > 0.
pub fn lsh_encode(model: &LshModel, x: &FeatureMatrix) -> Result<BitMatrix> {
    if x.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "lsh_encode",
            expected: model.dim(),
            found: x.dim(),
        });
    }
    let proj = x.to_f64_array().dot(&model.projections.t());
    let mut out = BitMatrix::zeros(x.rows(), model.bits());
    for i in 0..x.rows() {
        for j in 0..model.bits() {
            if proj[[i, j]] > 0.0 {
                out.set(i, j, true);
            }
        }
    }
    Ok(out)
}

pub fn save_lsh(path: &Path, model: &LshModel) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * model.bits() * model.dim());
    buf.extend_from_slice(&LSH_MAGIC);
    buf.extend_from_slice(&(model.bits() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    for v in model.projections.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    atomic_write(path, &buf)
}

pub fn load_lsh(path: &Path) -> Result<LshModel> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(path, &data);
    r.expect_magic(LSH_MAGIC)?;
    let bits = r.read_u32()? as usize;
    let dim = r.read_u32()? as usize;
    if bits == 0 || dim == 0 {
        return Err(r.malformed("bits and dim must be >= 1"));
    }
    let mut values = Vec::with_capacity(bits * dim);
    for _ in 0..bits * dim {
        values.push(r.read_f32()? as f64);
    }
    r.finish()?;
    LshModel::from_parts(Array2::from_shape_vec((bits, dim), values).expect("sized above"))
}
