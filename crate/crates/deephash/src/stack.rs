//! Greedy layer-wise pretraining of the full stack, architecture selection,
//! end-to-end encoding, and model (de)serialization.
//!
//! Model file layout (little-endian):
//! `DHM1` | u32 L | u32 dim | f64 thresholds | L layer records | metadata.
//! Each layer record is `DHL1` | u32 I | u32 J | f32 W row-major | f32 b |
//! f32 c | u8 has_center | f32 center. Metadata is u32 count followed by
//! length-prefixed UTF-8 `key=value` entries in sorted key order.
//!
//! Parameters are rounded through f32 before a layer is used for encoding,
//! so the feed to the next layer, the returned model, and the model read
//! back from disk all encode identically.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::io::{atomic_write, binarize, compute_thresholds, ByteReader, FeatureMatrix, ThresholdVector};
use crate::rbm::{train_layer, EpochStats, RbmHyperParams, RbmLayer};

pub const MODEL_MAGIC: [u8; 4] = *b"DHM1";
pub const LAYER_MAGIC: [u8; 4] = *b"DHL1";

/// Layer widths [d0, ..., dL]: d0 the input dim, dL the hash bits. Strictly
/// decreasing, every step a power-of-two reduction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    dims: Vec<usize>,
}

impl Architecture {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least [input, bits], got {dims:?}"
            )));
        }
        for w in dims.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b == 0 || b >= a {
                return Err(Error::InvalidArchitecture(format!(
                    "widths must strictly decrease: {a} -> {b}"
                )));
            }
            if a % b != 0 || !(a / b).is_power_of_two() {
                return Err(Error::InvalidArchitecture(format!(
                    "ratio {a}/{b} is not a power of two"
                )));
            }
        }
        Ok(Architecture { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn bits(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Number of trained layers L.
    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Reference architectures: depth grows as the code shrinks (one layer for
/// 1024 bits, two for 256, three for 64), halving the width per hidden layer
/// and jumping to the target bits at the end.
pub fn default_architecture(bits: usize, input_dim: usize) -> Result<Architecture> {
    let depth = match bits {
        1024 => 1,
        256 => 2,
        64 => 3,
        _ => {
            return Err(Error::UnsupportedArchitecture { bits, input_dim });
        }
    };
    let mut dims = vec![input_dim];
    for _ in 0..depth - 1 {
        dims.push(dims.last().unwrap() / 2);
    }
    dims.push(bits);
    Architecture::new(dims).map_err(|_| Error::UnsupportedArchitecture { bits, input_dim })
}

/// Input thresholds plus the trained layer chain and run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepHashModel {
    thresholds: ThresholdVector,
    layers: Vec<RbmLayer>,
    metadata: BTreeMap<String, String>,
}

impl DeepHashModel {
    pub fn new(
        thresholds: ThresholdVector,
        layers: Vec<RbmLayer>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("model needs at least one layer"));
        }
        if layers[0].visible_dim() != thresholds.dim() {
            return Err(Error::DimensionMismatch {
                context: "model thresholds vs first layer",
                expected: layers[0].visible_dim(),
                found: thresholds.dim(),
            });
        }
        for l in 1..layers.len() {
            if layers[l].visible_dim() != layers[l - 1].hidden_dim() {
                return Err(Error::DimensionMismatch {
                    context: "model layer chain",
                    expected: layers[l - 1].hidden_dim(),
                    found: layers[l].visible_dim(),
                });
            }
        }
        Ok(DeepHashModel {
            thresholds,
            layers,
            metadata,
        })
    }

    pub fn thresholds(&self) -> &ThresholdVector {
        &self.thresholds
    }

    pub fn layers(&self) -> &[RbmLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut Vec<RbmLayer> {
        &mut self.layers
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    pub fn input_dim(&self) -> usize {
        self.thresholds.dim()
    }

    pub fn bits(&self) -> usize {
        self.layers.last().unwrap().hidden_dim()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Widths [d0, ..., dL] recovered from the layer chain.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.hidden_dim()));
        dims
    }

    /// Binarize with the stored thresholds and push through every layer.
    pub fn encode(&self, x: &FeatureMatrix) -> Result<BitMatrix> {
        self.encode_at_layer(x, self.depth())
    }

    /// Stop the forward pass after layer `l` (1-based).
    pub fn encode_at_layer(&self, x: &FeatureMatrix, l: usize) -> Result<BitMatrix> {
        if l == 0 || l > self.depth() {
            return Err(Error::invalid(format!(
                "layer index {l} out of range 1..={}",
                self.depth()
            )));
        }
        let mut z = binarize(x, &self.thresholds)?;
        for layer in &self.layers[..l] {
            z = layer.encode(&z)?;
        }
        Ok(z)
    }
}

/// Greedy pretraining: binarize the input, then per layer train with CD-1,
/// center the biases, and feed the centered hard bits forward. Layer seeds
/// derive from `hp.seed` through a master stream, so one seed fixes the
/// whole run. Returns the model and per-layer epoch logs.
pub fn train_stack(
    x: &FeatureMatrix,
    arch: &Architecture,
    hp: &RbmHyperParams,
) -> Result<(DeepHashModel, Vec<Vec<EpochStats>>)> {
    if x.dim() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "train_stack input",
            expected: arch.input_dim(),
            found: x.dim(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::invalid("train_stack needs non-empty data"));
    }
    let thresholds = compute_thresholds(x)?;
    let mut z = binarize(x, &thresholds)?;
    let mut master = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut layers = Vec::with_capacity(arch.depth());
    let mut logs = Vec::with_capacity(arch.depth());

    for &hidden in &arch.dims()[1..] {
        let layer_hp = RbmHyperParams {
            seed: master.random(),
            ..hp.clone()
        };
        let (layer, stats) = train_layer(&z, hidden, &layer_hp)?;
        let mut centered = round_layer_to_f32(layer).center_biases(&z)?;
        centered = round_layer_to_f32(centered);
        z = centered.encode(&z)?;
        layers.push(centered);
        logs.push(stats);
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("scheme".into(), "deephash".into());
    metadata.insert(
        "architecture".into(),
        Architecture::new(arch.dims().to_vec()).unwrap().to_string(),
    );
    metadata.insert("learning_rate".into(), hp.learning_rate.to_string());
    metadata.insert("momentum".into(), hp.momentum.to_string());
    metadata.insert("epochs".into(), hp.epochs.to_string());
    metadata.insert("batch_size".into(), hp.batch_size.to_string());
    metadata.insert("lambda".into(), hp.lambda.to_string());
    metadata.insert("seed".into(), hp.seed.to_string());

    Ok((DeepHashModel::new(thresholds, layers, metadata)?, logs))
}

/// Round every parameter through f32 so the in-memory model matches its
/// on-disk representation exactly.
pub(crate) fn round_layer_to_f32(layer: RbmLayer) -> RbmLayer {
    let w = layer.w().mapv(|v| v as f32 as f64);
    let b = layer.b().mapv(|v| v as f32 as f64);
    let c = layer.c().mapv(|v| v as f32 as f64);
    let center = layer.center().map(|m| m.mapv(|v| v as f32 as f64));
    RbmLayer::from_parts(w, b, c, center).expect("rounding preserves validity")
}

fn write_layer_record(buf: &mut Vec<u8>, layer: &RbmLayer) {
    buf.extend_from_slice(&LAYER_MAGIC);
    buf.extend_from_slice(&(layer.visible_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(layer.hidden_dim() as u32).to_le_bytes());
    for v in layer.w().iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for v in layer.b().iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for v in layer.c().iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    match layer.center() {
        Some(center) => {
            buf.push(1);
            for v in center.iter() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        None => buf.push(0),
    }
}

fn read_layer_record(r: &mut ByteReader) -> Result<RbmLayer> {
    r.expect_magic(LAYER_MAGIC)?;
    let i = r.read_u32()? as usize;
    let j = r.read_u32()? as usize;
    if i == 0 || j == 0 {
        return Err(r.malformed("layer dims must be >= 1"));
    }
    let mut w = ndarray::Array2::zeros((i, j));
    for row in 0..i {
        for col in 0..j {
            w[[row, col]] = r.read_f32()? as f64;
        }
    }
    let mut b = ndarray::Array1::zeros(j);
    for k in 0..j {
        b[k] = r.read_f32()? as f64;
    }
    let mut c = ndarray::Array1::zeros(i);
    for k in 0..i {
        c[k] = r.read_f32()? as f64;
    }
    let center = match r.read_u8()? {
        0 => None,
        1 => {
            let mut m = ndarray::Array1::zeros(j);
            for k in 0..j {
                m[k] = r.read_f32()? as f64;
            }
            Some(m)
        }
        other => {
            return Err(r.malformed(format!("has_center flag must be 0 or 1, found {other}")));
        }
    };
    RbmLayer::from_parts(w, b, c, center)
}

fn write_metadata(buf: &mut Vec<u8>, metadata: &BTreeMap<String, String>) {
    buf.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    for (k, v) in metadata {
        let entry = format!("{k}={v}");
        buf.extend_from_slice(&(entry.len() as u32).to_le_bytes());
        buf.extend_from_slice(entry.as_bytes());
    }
}

fn read_metadata(r: &mut ByteReader) -> Result<BTreeMap<String, String>> {
    let count = r.read_u32()? as usize;
    let mut metadata = BTreeMap::new();
    for _ in 0..count {
        let len = r.read_u32()? as usize;
        let bytes = r.read_bytes(len)?;
        let entry = std::str::from_utf8(bytes)
            .map_err(|_| r.malformed("metadata entry is not UTF-8"))?;
        let (k, v) = entry
            .split_once('=')
            .ok_or_else(|| r.malformed(format!("metadata entry {entry:?} lacks '='")))?;
        metadata.insert(k.to_string(), v.to_string());
    }
    Ok(metadata)
}

pub fn save_model(path: &Path, model: &DeepHashModel) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&(model.depth() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.thresholds().dim() as u32).to_le_bytes());
    for t in model.thresholds().values() {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    for layer in model.layers() {
        write_layer_record(&mut buf, layer);
    }
    write_metadata(&mut buf, model.metadata());
    atomic_write(path, &buf)
}

pub fn load_model(path: &Path) -> Result<DeepHashModel> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(path, &data);
    r.expect_magic(MODEL_MAGIC)?;
    let depth = r.read_u32()? as usize;
    if depth == 0 {
        return Err(r.malformed("model must have at least one layer"));
    }
    let dim = r.read_u32()? as usize;
    if dim == 0 {
        return Err(r.malformed("threshold dim must be >= 1"));
    }
    let mut thresholds = Vec::with_capacity(dim);
    for _ in 0..dim {
        thresholds.push(r.read_f64()?);
    }
    let thresholds = ThresholdVector::new(thresholds)?;
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        layers.push(read_layer_record(&mut r)?);
    }
    let metadata = read_metadata(&mut r)?;
    r.finish()?;
    DeepHashModel::new(thresholds, layers, metadata)
}
