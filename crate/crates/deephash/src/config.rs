//! Run configuration: a TOML file with every knob materialized.
//!
//! Unknown keys are rejected so typos fail loudly, and each command emits
//! the fully-resolved config next to its outputs, making a run reproducible
//! from the emitted file alone.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rbm::RbmHyperParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Deephash,
    Itq,
    Lsh,
    Pq,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::Deephash => "deephash",
            Scheme::Itq => "itq",
            Scheme::Lsh => "lsh",
            Scheme::Pq => "pq",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deephash" => Ok(Scheme::Deephash),
            "itq" => Ok(Scheme::Itq),
            "lsh" => Ok(Scheme::Lsh),
            "pq" => Ok(Scheme::Pq),
            other => Err(Error::InvalidConfig(format!(
                "unknown scheme {other:?}, expected deephash | itq | lsh | pq"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossName {
    Single,
    Double,
}

impl std::str::FromStr for LossName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(LossName::Single),
            "double" => Ok(LossName::Double),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss {other:?}, expected single | double"
            ))),
        }
    }
}

/// Where encode takes its binarization thresholds from: the training-set
/// statistics stored in the model, or the statistics of the file being
/// encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSource {
    Train,
    #[serde(rename = "self")]
    SelfComputed,
}

impl std::str::FromStr for ThresholdSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(ThresholdSource::Train),
            "self" => Ok(ThresholdSource::SelfComputed),
            other => Err(Error::InvalidConfig(format!(
                "unknown threshold source {other:?}, expected train | self"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub features: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub database: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbmSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
}

impl Default for RbmSection {
    fn default() -> Self {
        let hp = RbmHyperParams::default();
        RbmSection {
            learning_rate: hp.learning_rate,
            momentum: hp.momentum,
            epochs: hp.epochs,
            batch_size: hp.batch_size,
            lambda: hp.lambda,
        }
    }
}

impl RbmSection {
    pub fn to_hyperparams(&self, seed: u64) -> RbmHyperParams {
        RbmHyperParams {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lambda: self.lambda,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch: usize,
    pub loss: LossName,
    /// Snapshot cadence for the recall trajectory; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub recall_r: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            learning_rate: 0.01,
            iterations: 100,
            batch: 32,
            loss: LossName::Double,
            checkpoint_every: 0,
            recall_r: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ItqSection {
    pub iterations: usize,
}

impl Default for ItqSection {
    fn default() -> Self {
        ItqSection { iterations: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PqSection {
    /// Centroids per block; must be a power of two so a bit budget divides
    /// into blocks of log2(k) bits each.
    pub k: usize,
}

impl Default for PqSection {
    fn default() -> Self {
        PqSection { k: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeSection {
    pub thresholds: ThresholdSource,
}

impl Default for EncodeSection {
    fn default() -> Self {
        EncodeSection {
            thresholds: ThresholdSource::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub metrics: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            metrics: vec!["recall@10".into(), "map".into()],
        }
    }
}

/// Everything a single train / finetune / encode / eval run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub bits: usize,
    pub seed: u64,
    /// Explicit layer dims for the deephash scheme; derived from `bits` and
    /// the feature dimension when absent, then recorded here on emission.
    pub architecture: Option<Vec<usize>>,
    pub paths: PathsSection,
    pub rbm: RbmSection,
    pub finetune: FinetuneSection,
    pub itq: ItqSection,
    pub pq: PqSection,
    pub encode: EncodeSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scheme: Scheme::Deephash,
            bits: 64,
            seed: 0,
            architecture: None,
            paths: PathsSection::default(),
            rbm: RbmSection::default(),
            finetune: FinetuneSection::default(),
            itq: ItqSection::default(),
            pq: PqSection::default(),
            encode: EncodeSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// One compare run: a cross product of schemes and bit widths over a shared
/// corpus, all rows landing in one long-format CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub schemes: Vec<Scheme>,
    pub bits: Vec<usize>,
    pub metrics: Vec<String>,
    pub seed: u64,
    /// Per-bit-width layer dims for the deephash scheme, keyed by the bit
    /// count as a string; widths without an entry use the derived default.
    pub architectures: BTreeMap<String, Vec<usize>>,
    pub paths: PathsSection,
    pub rbm: RbmSection,
    pub itq: ItqSection,
    pub pq: PqSection,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            schemes: vec![Scheme::Deephash, Scheme::Itq, Scheme::Lsh, Scheme::Pq],
            bits: vec![64],
            metrics: vec!["recall@10".into(), "map".into()],
            seed: 0,
            architectures: BTreeMap::new(),
            paths: PathsSection::default(),
            rbm: RbmSection::default(),
            itq: ItqSection::default(),
            pq: PqSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Recall(usize),
    Map,
    Ukb,
    Auc,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Metric> {
        if let Some(r) = s.strip_prefix("recall@") {
            let r: usize = r.parse().map_err(|_| {
                Error::InvalidConfig(format!("bad recall cutoff in {s:?}"))
            })?;
            if r == 0 {
                return Err(Error::InvalidConfig("recall cutoff must be >= 1".into()));
            }
            return Ok(Metric::Recall(r));
        }
        match s {
            "map" => Ok(Metric::Map),
            "ukb" => Ok(Metric::Ukb),
            "auc" => Ok(Metric::Auc),
            other => Err(Error::InvalidConfig(format!(
                "unknown metric {other:?}, expected recall@N | map | ukb | auc"
            ))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Metric::Recall(r) => format!("recall@{r}"),
            Metric::Map => "map".into(),
            Metric::Ukb => "ukb".into(),
            Metric::Auc => "auc".into(),
        }
    }
}

pub fn parse_metrics(names: &[String]) -> Result<Vec<Metric>> {
    if names.is_empty() {
        return Err(Error::InvalidConfig("metrics list is empty".into()));
    }
    names.iter().map(|s| Metric::parse(s)).collect()
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    parse_toml(path)
}

pub fn load_compare_config(path: &Path) -> Result<CompareConfig> {
    parse_toml(path)
}

/// The fully-materialized config text a command writes beside its outputs.
pub fn effective_toml<T: Serialize>(cfg: &T) -> Result<String> {
    toml::to_string_pretty(cfg)
        .map_err(|e| Error::InvalidConfig(format!("config serialization: {e}")))
}

/// Hex SHA-256 of the effective config text, stamped into reports.
pub fn config_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub(crate) fn require_path<'a>(
    slot: &'a Option<PathBuf>,
    what: &str,
) -> Result<&'a Path> {
    let p = slot
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("paths.{what} is required")))?;
    if !p.exists() {
        return Err(Error::InvalidConfig(format!(
            "paths.{what}: {} does not exist",
            p.display()
        )));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg: RunConfig = toml::from_str("scheme = \"lsh\"\nbits = 32").unwrap();
        assert_eq!(cfg.scheme, Scheme::Lsh);
        assert_eq!(cfg.bits, 32);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.rbm.epochs, 30);
        assert_eq!(cfg.rbm.lambda, 0.1);
        assert_eq!(cfg.finetune.loss, LossName::Double);
        assert_eq!(cfg.pq.k, 256);
        assert_eq!(cfg.itq.iterations, 50);
        assert_eq!(cfg.encode.thresholds, ThresholdSource::Train);
    }

    #[test]
    fn unknown_keys_rejected_at_any_level() {
        assert!(toml::from_str::<RunConfig>("shceme = \"lsh\"").is_err());
        assert!(toml::from_str::<RunConfig>("[rbm]\nlerning_rate = 0.1").is_err());
        assert!(toml::from_str::<RunConfig>("[paths]\nfeatuers = \"x\"").is_err());
        assert!(toml::from_str::<CompareConfig>("[compare]\nx = 1").is_err());
    }

    #[test]
    fn effective_config_round_trips_with_all_defaults_visible() {
        let mut cfg = RunConfig::default();
        cfg.architecture = Some(vec![128, 64]);
        cfg.paths.features = Some(PathBuf::from("train.dhf"));
        let text = effective_toml(&cfg).unwrap();
        for key in [
            "scheme",
            "bits",
            "seed",
            "learning_rate",
            "momentum",
            "epochs",
            "batch_size",
            "lambda",
            "iterations",
            "metrics",
            "thresholds",
            "architecture",
        ] {
            assert!(text.contains(key), "missing {key} in:\n{text}");
        }
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn metric_names_parse_and_print() {
        assert_eq!(Metric::parse("recall@10").unwrap(), Metric::Recall(10));
        assert_eq!(Metric::parse("map").unwrap(), Metric::Map);
        assert_eq!(Metric::parse("ukb").unwrap(), Metric::Ukb);
        assert_eq!(Metric::parse("auc").unwrap(), Metric::Auc);
        assert!(Metric::parse("recall@0").is_err());
        assert!(Metric::parse("recall@x").is_err());
        let err = Metric::parse("precision").unwrap_err().to_string();
        assert!(err.contains("recall@N"), "should list valid names: {err}");
        assert_eq!(Metric::Recall(7).name(), "recall@7");
    }

    #[test]
    fn config_hash_is_stable_and_input_sensitive() {
        let a = config_hash("scheme = \"lsh\"\n");
        let b = config_hash("scheme = \"lsh\"\n");
        let c = config_hash("scheme = \"itq\"\n");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
        assert!(a.chars().all(|ch| ch.is_ascii_hexdigit()));
    }

    #[test]
    fn scheme_and_loss_parse_from_cli_strings() {
        assert_eq!("deephash".parse::<Scheme>().unwrap(), Scheme::Deephash);
        assert_eq!("pq".parse::<Scheme>().unwrap(), Scheme::Pq);
        assert!("dephash".parse::<Scheme>().is_err());
        assert_eq!("single".parse::<LossName>().unwrap(), LossName::Single);
        assert_eq!(
            "self".parse::<ThresholdSource>().unwrap(),
            ThresholdSource::SelfComputed
        );
        assert!("test".parse::<ThresholdSource>().is_err());
    }
}
