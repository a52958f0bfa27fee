//! Product quantization with asymmetric distance computation.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use super::kmeans::kmeans;
use super::round2;
use crate::error::{Error, Result};
use crate::io::{atomic_write, ByteReader, FeatureMatrix};

pub(crate) const PQ_MAGIC: [u8; 4] = *b"DHPQ";
pub(crate) const PQ_CODES_MAGIC: [u8; 4] = *b"DHPC";

/// One k x block_dim codebook per block of the input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PqModel {
    codebooks: Vec<Array2<f64>>,
}

impl PqModel {
    pub fn from_parts(codebooks: Vec<Array2<f64>>) -> Result<Self> {
        if codebooks.is_empty() {
            return Err(Error::invalid("at least one codebook required"));
        }
        let k = codebooks[0].nrows();
        let block_dim = codebooks[0].ncols();
        if k == 0 || block_dim == 0 {
            return Err(Error::invalid("codebooks must be non-empty"));
        }
        if k > u16::MAX as usize + 1 {
            return Err(Error::invalid(format!("k must be <= 65536, got {k}")));
        }
        for cb in &codebooks {
            if cb.nrows() != k || cb.ncols() != block_dim {
                return Err(Error::invalid("codebooks must share one shape"));
            }
            if cb.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("codebooks must be finite"));
            }
        }
        Ok(PqModel { codebooks })
    }

    pub fn num_blocks(&self) -> usize {
        self.codebooks.len()
    }

    pub fn block_dim(&self) -> usize {
        self.codebooks[0].ncols()
    }

    pub fn k(&self) -> usize {
        self.codebooks[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.num_blocks() * self.block_dim()
    }

    pub fn codebook(&self, block: usize) -> &Array2<f64> {
        &self.codebooks[block]
    }
}

/// Independent k-means per block. The input dimension must split evenly
/// into `num_blocks` and there must be at least k rows.
pub fn pq_train(x: &FeatureMatrix, num_blocks: usize, k: usize, seed: u64) -> Result<PqModel> {
    if num_blocks == 0 {
        return Err(Error::invalid("num_blocks must be >= 1"));
    }
    if k < 2 || k > u16::MAX as usize + 1 {
        return Err(Error::invalid(format!("k must be in 2..=65536, got {k}")));
    }
    if x.dim() % num_blocks != 0 {
        return Err(Error::invalid(format!(
            "dim {} not divisible into {num_blocks} blocks",
            x.dim()
        )));
    }
    if x.rows() < k {
        return Err(Error::invalid(format!(
            "pq_train needs at least k = {k} rows, got {}",
            x.rows()
        )));
    }
    let block_dim = x.dim() / num_blocks;
    let xd = x.to_f64_array();
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut codebooks = Vec::with_capacity(num_blocks);
    for b in 0..num_blocks {
        let slice = xd
            .slice(ndarray::s![.., b * block_dim..(b + 1) * block_dim])
            .to_owned();
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let result = kmeans(slice.view(), k, &mut rng)?;
        codebooks.push(round2(result.centroids));
    }
    PqModel::from_parts(codebooks)
}

fn block_dist2(row: &[f32], centroid: ArrayView1<f64>) -> f64 {
    row.iter()
        .zip(centroid.iter())
        .map(|(x, c)| (*x as f64 - c) * (*x as f64 - c))
        .sum()
}

/// Per block: index of the nearest centroid, ties to the lowest index.
pub fn pq_encode(model: &PqModel, x: &FeatureMatrix) -> Result<Array2<u16>> {
    if x.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "pq_encode",
            expected: model.dim(),
            found: x.dim(),
        });
    }
    let bd = model.block_dim();
    let mut codes = Array2::zeros((x.rows(), model.num_blocks()));
    for i in 0..x.rows() {
        let row = x.row(i);
        for b in 0..model.num_blocks() {
            let sub = &row[b * bd..(b + 1) * bd];
            let cb = model.codebook(b);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..model.k() {
                let d = block_dist2(sub, cb.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            codes[[i, b]] = best as u16;
        }
    }
    Ok(codes)
}

/// Squared distances from one query to every centroid of every block,
/// num_blocks x k.
pub fn pq_adc_lut(model: &PqModel, query: &[f32]) -> Result<Array2<f64>> {
    if query.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "pq_adc_lut",
            expected: model.dim(),
            found: query.len(),
        });
    }
    let bd = model.block_dim();
    let mut lut = Array2::zeros((model.num_blocks(), model.k()));
    for b in 0..model.num_blocks() {
        let sub = &query[b * bd..(b + 1) * bd];
        let cb = model.codebook(b);
        for c in 0..model.k() {
            lut[[b, c]] = block_dist2(sub, cb.row(c));
        }
    }
    Ok(lut)
}

/// Asymmetric distance of a query LUT to one code row: the sum of the
/// looked-up per-block squared distances.
pub fn pq_adc_distance(lut: &Array2<f64>, code: &[u16]) -> Result<f64> {
    if code.len() != lut.nrows() {
        return Err(Error::DimensionMismatch {
            context: "pq_adc_distance",
            expected: lut.nrows(),
            found: code.len(),
        });
    }
    let k = lut.ncols();
    let mut total = 0.0;
    for (b, &c) in code.iter().enumerate() {
        if c as usize >= k {
            return Err(Error::invalid(format!(
                "code {c} out of range for k = {k} in block {b}"
            )));
        }
        total += lut[[b, c as usize]];
    }
    Ok(total)
}

/// ADC distances of every query row against every code row.
pub fn pq_adc_distances(
    model: &PqModel,
    queries: &FeatureMatrix,
    codes: &Array2<u16>,
) -> Result<Vec<Vec<f64>>> {
    if codes.ncols() != model.num_blocks() {
        return Err(Error::DimensionMismatch {
            context: "pq_adc_distances codes",
            expected: model.num_blocks(),
            found: codes.ncols(),
        });
    }
    let mut out = Vec::with_capacity(queries.rows());
    for q in 0..queries.rows() {
        let lut = pq_adc_lut(model, queries.row(q))?;
        let mut row = Vec::with_capacity(codes.nrows());
        for i in 0..codes.nrows() {
            let code = codes.row(i);
            row.push(pq_adc_distance(&lut, code.as_slice().unwrap())?);
        }
        out.push(row);
    }
    Ok(out)
}

pub fn save_pq(path: &Path, model: &PqModel) -> Result<()> {
    let mut buf =
        Vec::with_capacity(16 + 4 * model.num_blocks() * model.k() * model.block_dim());
    buf.extend_from_slice(&PQ_MAGIC);
    buf.extend_from_slice(&(model.num_blocks() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.block_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.k() as u32).to_le_bytes());
    for cb in &model.codebooks {
        for v in cb.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    atomic_write(path, &buf)
}

pub fn load_pq(path: &Path) -> Result<PqModel> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(path, &data);
    r.expect_magic(PQ_MAGIC)?;
    let num_blocks = r.read_u32()? as usize;
    let block_dim = r.read_u32()? as usize;
    let k = r.read_u32()? as usize;
    if num_blocks == 0 || block_dim == 0 || k == 0 {
        return Err(r.malformed("num_blocks, block_dim and k must be >= 1"));
    }
    if k > u16::MAX as usize + 1 {
        return Err(r.malformed(format!("k must be <= 65536, got {k}")));
    }
    let mut codebooks = Vec::with_capacity(num_blocks);
    for _ in 0..num_blocks {
        let mut values = Vec::with_capacity(k * block_dim);
        for _ in 0..k * block_dim {
            values.push(r.read_f32()? as f64);
        }
        codebooks.push(Array2::from_shape_vec((k, block_dim), values).expect("sized above"));
    }
    r.finish()?;
    PqModel::from_parts(codebooks)
}

pub fn save_pq_codes(path: &Path, codes: &Array2<u16>) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 2 * codes.len());
    buf.extend_from_slice(&PQ_CODES_MAGIC);
    buf.extend_from_slice(&(codes.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(codes.ncols() as u32).to_le_bytes());
    for v in codes.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &buf)
}

pub fn load_pq_codes(path: &Path) -> Result<Array2<u16>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(path, &data);
    r.expect_magic(PQ_CODES_MAGIC)?;
    let rows = r.read_u32()? as usize;
    let num_blocks = r.read_u32()? as usize;
    if num_blocks == 0 {
        return Err(r.malformed("num_blocks must be >= 1"));
    }
    let mut values = Vec::with_capacity(rows * num_blocks);
    for _ in 0..rows * num_blocks {
        values.push(r.read_u16()?);
    }
    r.finish()?;
    Ok(Array2::from_shape_vec((rows, num_blocks), values).expect("sized above"))
}
