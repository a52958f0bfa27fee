//! Feature matrices, labeled pairs, binarization, and the on-disk formats.
//!
//! Binary formats are little-endian with a 4-byte magic:
//! - features `DHF1`: magic | u32 rows | u32 dim | f32 row-major values
//! - bit codes `DHB1`: magic | u32 rows | u32 bits | u64 packed words row-major
//!
//! Pairs are UTF-8 lines `index_a,index_b,label` with `#` comments.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bits::BitMatrix;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"DHF1";
pub const BITS_MAGIC: [u8; 4] = *b"DHB1";

/// N x D matrix of real-valued feature vectors, one row per item.
/// Values are stored as `f32`, matching the file format exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    /// Rows may be zero (an empty batch); `dim` must be at least 1 and every
    /// value finite.
    pub fn new(rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature matrix dim must be >= 1"));
        }
        if values.len() != rows * dim {
            return Err(Error::invalid(format!(
                "feature matrix payload: expected {} values, found {}",
                rows * dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "feature matrix value at flat index {pos} is not finite"
            )));
        }
        Ok(FeatureMatrix { rows, dim, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.dim + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.values[row * self.dim..(row + 1) * self.dim]
    }

    pub fn to_f64_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.dim), |(i, j)| self.get(i, j) as f64)
    }

    /// Copy the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: indices.len(),
            dim: self.dim,
            values,
        }
    }
}

/// Per-component binarization thresholds (column means of a training matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector {
    values: Vec<f64>,
}

impl ThresholdVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("threshold vector must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("threshold vector contains non-finite value"));
        }
        Ok(ThresholdVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Column means of the feature matrix, accumulated in f64.
pub fn compute_thresholds(x: &FeatureMatrix) -> Result<ThresholdVector> {
    if x.rows() == 0 {
        return Err(Error::invalid(
            "cannot compute thresholds of an empty feature matrix",
        ));
    }
    let mut sums = vec![0.0f64; x.dim()];
    for i in 0..x.rows() {
        for (s, &v) in sums.iter_mut().zip(x.row(i)) {
            *s += v as f64;
        }
    }
    let n = x.rows() as f64;
    ThresholdVector::new(sums.into_iter().map(|s| s / n).collect())
}

/// Bit (i, j) is set iff x(i, j) is strictly greater than threshold j;
/// ties binarize to 0.
pub fn binarize(x: &FeatureMatrix, t: &ThresholdVector) -> Result<BitMatrix> {
    if x.dim() != t.dim() {
        return Err(Error::DimensionMismatch {
            context: "binarize",
            expected: t.dim(),
            found: x.dim(),
        });
    }
    let mut out = BitMatrix::zeros(x.rows(), x.dim());
    for i in 0..x.rows() {
        for (j, (&v, &th)) in x.row(i).iter().zip(t.values()).enumerate() {
            if (v as f64) > th {
                out.set(i, j, true);
            }
        }
    }
    Ok(out)
}

/// One labeled item pair; `matching` mirrors the y in {1 = matching, 0 = not}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub matching: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSet {
    pairs: Vec<Pair>,
}

impl PairSet {
    pub fn new(pairs: Vec<Pair>, n_items: usize) -> Result<Self> {
        for (k, p) in pairs.iter().enumerate() {
            if p.a == p.b {
                return Err(Error::invalid(format!(
                    "pair {k}: self-pair ({}, {})",
                    p.a, p.b
                )));
            }
            if p.a >= n_items || p.b >= n_items {
                return Err(Error::invalid(format!(
                    "pair {k}: index out of range for {n_items} items"
                )));
            }
        }
        Ok(PairSet { pairs })
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn matching_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.matching).count()
    }
}

/// For every matching pair (a, b), draw one item r outside {a, b} and append
/// the non-matching pairs (a, r) and (b, r). Output is three times the input,
/// originals first, and is deterministic for a fixed seed.
pub fn expand_with_nonmatching(p: &PairSet, n_items: usize, seed: u64) -> Result<PairSet> {
    if n_items < 3 {
        return Err(Error::invalid(
            "expand_with_nonmatching needs at least 3 items",
        ));
    }
    if p.pairs().iter().any(|p| !p.matching) {
        return Err(Error::invalid(
            "expand_with_nonmatching expects matching pairs only",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = p.pairs.clone();
    let mut appended = Vec::with_capacity(2 * p.len());
    for pair in &p.pairs {
        let (lo, hi) = if pair.a < pair.b {
            (pair.a, pair.b)
        } else {
            (pair.b, pair.a)
        };
        // Uniform over 0..n_items with lo and hi skipped.
        let mut r = rng.random_range(0..n_items - 2);
        if r >= lo {
            r += 1;
        }
        if r >= hi {
            r += 1;
        }
        appended.push(Pair {
            a: pair.a,
            b: r,
            matching: false,
        });
        appended.push(Pair {
            a: pair.b,
            b: r,
            matching: false,
        });
    }
    out.extend(appended);
    PairSet::new(out, n_items)
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

/// Byte-slice cursor that reports offsets in parse errors.
pub(crate) struct ByteReader<'a> {
    path: PathBuf,
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(path: &Path, data: &'a [u8]) -> Self {
        ByteReader {
            path: path.to_path_buf(),
            data,
            pos: 0,
        }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Truncated {
                path: self.path.clone(),
                offset: self.data.len() as u64,
                needed: (self.pos + n - self.data.len()) as u64,
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn expect_magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        let found = [got[0], got[1], got[2], got[3]];
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.clone(),
                expected,
                found,
            });
        }
        Ok(())
    }

    pub(crate) fn read_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn read_u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn read_u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn read_u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn read_f32(&mut self) -> Result<f32> {
        let off = self.offset();
        let b = self.take(4)?;
        let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                path: self.path.clone(),
                offset: off,
            });
        }
        Ok(v)
    }

    pub(crate) fn read_f64(&mut self) -> Result<f64> {
        let off = self.offset();
        let b = self.take(8)?;
        let v = f64::from_le_bytes(b.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite {
                path: self.path.clone(),
                offset: off,
            });
        }
        Ok(v)
    }

    pub(crate) fn read_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Malformed {
                path: self.path.clone(),
                offset: self.pos as u64,
                what: format!("{} trailing byte(s)", self.data.len() - self.pos),
            });
        }
        Ok(())
    }

    pub(crate) fn malformed(&self, what: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.clone(),
            offset: self.pos as u64,
            what: what.into(),
        }
    }
}

/// Write `bytes` to `path` via a temp file in the same directory plus rename,
/// so a failed run never leaves a partial file behind.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp.{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save_feature_matrix(path: &Path, x: &FeatureMatrix) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * x.values().len());
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&(x.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(x.dim() as u32).to_le_bytes());
    for v in x.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &buf)
}

pub fn load_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(path, &data);
    r.expect_magic(FEATURE_MAGIC)?;
    let rows = r.read_u32()? as usize;
    let dim_off = r.offset();
    let dim = r.read_u32()? as usize;
    if dim == 0 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            offset: dim_off,
            what: "dim must be >= 1".into(),
        });
    }
    let mut values = Vec::with_capacity(rows * dim);
    for _ in 0..rows * dim {
        values.push(r.read_f32()?);
    }
    r.finish()?;
    FeatureMatrix::new(rows, dim, values)
}

pub fn save_bit_matrix(path: &Path, m: &BitMatrix) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 8 * m.words().len());
    buf.extend_from_slice(&BITS_MAGIC);
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.bits() as u32).to_le_bytes());
    for w in m.words() {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    atomic_write(path, &buf)
}

pub fn load_bit_matrix(path: &Path) -> Result<BitMatrix> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(path, &data);
    r.expect_magic(BITS_MAGIC)?;
    let rows = r.read_u32()? as usize;
    let bits_off = r.offset();
    let bits = r.read_u32()? as usize;
    if bits == 0 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            offset: bits_off,
            what: "bits must be >= 1".into(),
        });
    }
    let words_per_row = bits.div_ceil(64);
    let used = bits % 64;
    let tail_mask = if used == 0 { 0 } else { !((1u64 << used) - 1) };
    let mut words = Vec::with_capacity(rows * words_per_row);
    for k in 0..rows * words_per_row {
        let off = r.offset();
        let w = r.read_u64()?;
        if tail_mask != 0 && (k + 1) % words_per_row == 0 && w & tail_mask != 0 {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                offset: off,
                what: "nonzero bits past the declared width".into(),
            });
        }
        words.push(w);
    }
    r.finish()?;
    BitMatrix::from_words(rows, bits, words)
}

pub fn save_pairs(path: &Path, p: &PairSet) -> Result<()> {
    let mut buf = String::new();
    for pair in p.pairs() {
        buf.push_str(&format!(
            "{},{},{}\n",
            pair.a,
            pair.b,
            if pair.matching { 1 } else { 0 }
        ));
    }
    atomic_write(path, buf.as_bytes())
}

pub fn load_pairs(path: &Path, n_items: usize) -> Result<PairSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
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
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(err(format!(
                "expected 3 comma-separated fields, found {}",
                fields.len()
            )));
        }
        let a: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("bad index {:?}", fields[0])))?;
        let b: usize = fields[1]
            .parse()
            .map_err(|_| err(format!("bad index {:?}", fields[1])))?;
        let matching = match fields[2] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("label must be 0 or 1, found {other:?}"))),
        };
        if a == b {
            return Err(err(format!("self-pair ({a}, {b})")));
        }
        if a >= n_items || b >= n_items {
            return Err(err(format!(
                "index out of range: ({a}, {b}) with {n_items} items"
            )));
        }
        pairs.push(Pair { a, b, matching });
    }
    PairSet::new(pairs, n_items)
}
