//! Command implementations behind the CLI binary.
//!
//! Every command validates its inputs, computes everything, and only then
//! writes outputs, each through the write-to-temp-then-rename path, so a
//! failed run leaves no partial files. Outputs land in the chosen out
//! directory under fixed names, next to the fully-resolved config that
//! produced them.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;

use crate::baselines::{
    itq_encode, itq_train, load_itq, load_lsh, load_pq, lsh_encode, lsh_train, pq_adc_distances,
    pq_encode, pq_train, save_itq, save_lsh, save_pq, save_pq_codes, ItqModel, LshModel, PqModel,
};
use crate::config::{
    config_hash, effective_toml, parse_metrics, require_path, CompareConfig, LossName, Metric,
    RunConfig, Scheme, ThresholdSource,
};
use crate::error::{Error, Result};
use crate::eval::{
    mean_average_precision, pair_distances, rank_all, rank_by_scores, recall_at_r, roc_auc,
    to_f64, ukb_score, GroundTruth, Ranking,
};
use crate::io::{
    atomic_write, expand_with_nonmatching, load_bit_matrix, load_feature_matrix, load_pairs,
    save_bit_matrix, compute_thresholds, FeatureMatrix, PairSet,
};
use crate::rbm::EpochStats;
use crate::siamese::{
    estimate_margins, run_finetune, FinetuneConfig, FinetuneLogEntry, LossVariant,
};
use crate::stack::{
    default_architecture, load_model, save_model, train_stack, Architecture, DeepHashModel,
};

pub const MODEL_FILE: &str = "model.bin";
pub const CODES_FILE: &str = "codes.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const FINETUNE_LOG_FILE: &str = "finetune_log.csv";
pub const TRAJECTORY_FILE: &str = "recall_trajectory.csv";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const COMPARE_FILE: &str = "compare.csv";
pub const CONFIG_FILE: &str = "effective_config.toml";

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes())
}

/// Blocks a bit budget splits into: log2(k) bits per block.
fn pq_blocks(bits: usize, k: usize) -> Result<usize> {
    if !k.is_power_of_two() || k < 2 {
        return Err(Error::InvalidConfig(format!(
            "pq.k must be a power of two >= 2, got {k}"
        )));
    }
    let per_block = k.trailing_zeros() as usize;
    if bits % per_block != 0 {
        return Err(Error::InvalidConfig(format!(
            "bits = {bits} does not divide into blocks of log2(k) = {per_block} bits"
        )));
    }
    Ok(bits / per_block)
}

fn resolve_architecture(
    bits: usize,
    input_dim: usize,
    dims_override: Option<&[usize]>,
) -> Result<Architecture> {
    match dims_override {
        Some(dims) => {
            let arch = Architecture::new(dims.to_vec())?;
            if arch.bits() != bits {
                return Err(Error::InvalidConfig(format!(
                    "architecture ends in {} units but bits = {bits}",
                    arch.bits()
                )));
            }
            if arch.input_dim() != input_dim {
                return Err(Error::InvalidConfig(format!(
                    "architecture starts at {} units but features have dim {input_dim}",
                    arch.input_dim()
                )));
            }
            Ok(arch)
        }
        None => default_architecture(bits, input_dim),
    }
}

fn loss_variant(name: LossName) -> LossVariant {
    match name {
        LossName::Single => LossVariant::SingleMargin,
        LossName::Double => LossVariant::DoubleMargin,
    }
}

fn train_log_csv(stats: &[Vec<EpochStats>]) -> String {
    let mut s = String::from(
        "layer,epoch,reconstruction_error,activation_mean,activation_min,activation_max\n",
    );
    for (l, layer_stats) in stats.iter().enumerate() {
        for e in layer_stats {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                l + 1,
                e.epoch,
                e.reconstruction_error,
                e.activation_mean,
                e.activation_min,
                e.activation_max
            ));
        }
    }
    s
}

fn itq_log_csv(errors: &[f64]) -> String {
    let mut s = String::from("iteration,quantization_error\n");
    for (i, e) in errors.iter().enumerate() {
        s.push_str(&format!("{},{e}\n", i + 1));
    }
    s
}

fn finetune_log_csv(depth: usize, log: &[FinetuneLogEntry]) -> String {
    let mut s = String::from("iteration,total_loss");
    for l in 1..=depth {
        s.push_str(&format!(",loss_layer_{l}"));
    }
    s.push('\n');
    for e in log {
        s.push_str(&format!("{},{}", e.iteration, e.total_loss));
        for v in &e.layer_losses {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

/// Train one model on a feature file and write model + log + config.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let features = load_feature_matrix(require_path(&cfg.paths.features, "features")?)?;
    if cfg.bits == 0 {
        return Err(Error::InvalidConfig("bits must be >= 1".into()));
    }
    let mut effective = cfg.clone();
    enum Trained {
        Deep(DeepHashModel, Vec<Vec<EpochStats>>),
        Lsh(LshModel),
        Itq(ItqModel, Vec<f64>),
        Pq(PqModel),
    }
    let trained = match cfg.scheme {
        Scheme::Deephash => {
            let hp = cfg.rbm.to_hyperparams(cfg.seed);
            hp.validate()?;
            let arch =
                resolve_architecture(cfg.bits, features.dim(), cfg.architecture.as_deref())?;
            effective.architecture = Some(arch.dims().to_vec());
            let (model, stats) = train_stack(&features, &arch, &hp)?;
            Trained::Deep(model, stats)
        }
        Scheme::Lsh => Trained::Lsh(lsh_train(features.dim(), cfg.bits, cfg.seed)?),
        Scheme::Itq => {
            let (model, errors) = itq_train(&features, cfg.bits, cfg.itq.iterations, cfg.seed)?;
            Trained::Itq(model, errors)
        }
        Scheme::Pq => {
            let blocks = pq_blocks(cfg.bits, cfg.pq.k)?;
            Trained::Pq(pq_train(&features, blocks, cfg.pq.k, cfg.seed)?)
        }
    };

    ensure_out_dir(out)?;
    let model_path = out.join(MODEL_FILE);
    match &trained {
        Trained::Deep(model, stats) => {
            save_model(&model_path, model)?;
            write_text(&out.join(TRAIN_LOG_FILE), &train_log_csv(stats))?;
        }
        Trained::Lsh(model) => save_lsh(&model_path, model)?,
        Trained::Itq(model, errors) => {
            save_itq(&model_path, model)?;
            write_text(&out.join(TRAIN_LOG_FILE), &itq_log_csv(errors))?;
        }
        Trained::Pq(model) => save_pq(&model_path, model)?,
    }
    write_text(&out.join(CONFIG_FILE), &effective_toml(&effective)?)?;
    Ok(())
}

/// Pairs files holding only matching pairs get non-matching complements
/// drawn per matching pair, the usual weak-supervision setup.
fn load_training_pairs(path: &Path, n_items: usize, seed: u64) -> Result<PairSet> {
    let pairs = load_pairs(path, n_items)?;
    if pairs.matching_count() == pairs.len() {
        return expand_with_nonmatching(&pairs, n_items, seed);
    }
    Ok(pairs)
}

/// Fine-tune a pretrained stack with the contrastive loss chosen in the
/// config. Zero iterations copy the input model through unchanged.
pub fn cmd_finetune(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model_path = require_path(&cfg.paths.model, "model")?;
    let features = load_feature_matrix(require_path(&cfg.paths.features, "features")?)?;
    let model = load_model(model_path)?;

    if cfg.finetune.iterations == 0 {
        let raw = std::fs::read(model_path).map_err(|e| Error::io(model_path, e))?;
        ensure_out_dir(out)?;
        atomic_write(&out.join(MODEL_FILE), &raw)?;
        write_text(
            &out.join(FINETUNE_LOG_FILE),
            &finetune_log_csv(model.depth(), &[]),
        )?;
        write_text(&out.join(CONFIG_FILE), &effective_toml(cfg)?)?;
        return Ok(());
    }

    let pairs_path = require_path(&cfg.paths.pairs, "pairs")?;
    let pairs = load_training_pairs(pairs_path, features.rows(), cfg.seed)?;
    let fc = FinetuneConfig {
        learning_rate: cfg.finetune.learning_rate,
        iterations: cfg.finetune.iterations,
        batch: cfg.finetune.batch,
        seed: cfg.seed,
    };
    fc.validate()?;
    let mc = estimate_margins(&model, &pairs, &features)?;
    let loss = loss_variant(cfg.finetune.loss);

    let mut trajectory: Vec<(usize, f64)> = Vec::new();
    let validation = if cfg.finetune.checkpoint_every > 0 {
        let queries = load_feature_matrix(require_path(&cfg.paths.queries, "queries")?)?;
        let gt = GroundTruth::load(
            require_path(&cfg.paths.ground_truth, "ground_truth")?,
            features.rows(),
        )?;
        Some((queries, gt))
    } else {
        None
    };

    let (tuned, log) = run_finetune(
        &model,
        &pairs,
        &features,
        &mc,
        &fc,
        loss,
        cfg.finetune.checkpoint_every,
        |it, snapshot| {
            let (queries, gt) = validation.as_ref().expect("checkpoints imply validation");
            let db = snapshot.encode(&features)?;
            let qc = snapshot.encode(queries)?;
            let rk = rank_all(&qc, &db)?;
            trajectory.push((it, recall_at_r(&rk, gt, cfg.finetune.recall_r)?));
            Ok(())
        },
    )?;

    ensure_out_dir(out)?;
    save_model(&out.join(MODEL_FILE), &tuned)?;
    write_text(
        &out.join(FINETUNE_LOG_FILE),
        &finetune_log_csv(tuned.depth(), &log),
    )?;
    if !trajectory.is_empty() {
        let mut s = format!("iteration,recall@{}\n", cfg.finetune.recall_r);
        for (it, r) in &trajectory {
            s.push_str(&format!("{it},{r}\n"));
        }
        write_text(&out.join(TRAJECTORY_FILE), &s)?;
    }
    write_text(&out.join(CONFIG_FILE), &effective_toml(cfg)?)?;
    Ok(())
}

fn peek_magic(path: &Path) -> Result<[u8; 4]> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if data.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: 0,
            needed: 4,
        });
    }
    Ok([data[0], data[1], data[2], data[3]])
}

/// Encode a feature file with any trained model, dispatching on the file
/// magic. Hash models write a packed bit-code file; product quantizers
/// write a code-index file.
pub fn cmd_encode(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model_path = require_path(&cfg.paths.model, "model")?;
    let features = load_feature_matrix(require_path(&cfg.paths.features, "features")?)?;
    ensure_out_dir(out)?;
    let codes_path = out.join(CODES_FILE);
    match &peek_magic(model_path)? {
        b"DHM1" => {
            let model = load_model(model_path)?;
            let model = match cfg.encode.thresholds {
                ThresholdSource::Train => model,
                ThresholdSource::SelfComputed => DeepHashModel::new(
                    compute_thresholds(&features)?,
                    model.layers().to_vec(),
                    model.metadata().clone(),
                )?,
            };
            save_bit_matrix(&codes_path, &model.encode(&features)?)?;
        }
        b"DHLS" => {
            let model = load_lsh(model_path)?;
            save_bit_matrix(&codes_path, &lsh_encode(&model, &features)?)?;
        }
        b"DHIQ" => {
            let model = load_itq(model_path)?;
            save_bit_matrix(&codes_path, &itq_encode(&model, &features)?)?;
        }
        b"DHPQ" => {
            let model = load_pq(model_path)?;
            save_pq_codes(&codes_path, &pq_encode(&model, &features)?)?;
        }
        other => {
            return Err(Error::invalid(format!(
                "{}: unrecognized model magic {:?}; expected DHM1, DHLS, DHIQ or DHPQ",
                model_path.display(),
                String::from_utf8_lossy(other)
            )))
        }
    }
    write_text(&out.join(CONFIG_FILE), &effective_toml(cfg)?)?;
    Ok(())
}

#[derive(Serialize)]
struct MetricRow {
    metric: String,
    value: f64,
}

#[derive(Serialize)]
struct EvalReport {
    scheme: String,
    bits: usize,
    seed: u64,
    config_hash: String,
    metrics: Vec<MetricRow>,
}

fn metrics_csv(scheme: &str, bits: usize, rows: &[MetricRow]) -> String {
    let mut s = String::from("scheme,bits,metric,value\n");
    for r in rows {
        s.push_str(&format!("{scheme},{bits},{},{}\n", r.metric, r.value));
    }
    s
}

fn rank_metric(metric: Metric, rk: &Ranking, gt: &GroundTruth) -> Result<f64> {
    match metric {
        Metric::Recall(r) => recall_at_r(rk, gt, r),
        Metric::Map => mean_average_precision(rk, gt),
        Metric::Ukb => ukb_score(rk, gt),
        Metric::Auc => Err(Error::invalid("auc is not rank-based")),
    }
}

/// Evaluate code files against ground truth and emit a JSON + CSV report.
/// Ranking metrics need query codes, database codes and a ground-truth
/// file; auc needs database codes and a labeled pairs file.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let metrics = parse_metrics(&cfg.eval.metrics)?;
    let database = load_bit_matrix(require_path(&cfg.paths.database, "database")?)?;

    let ranked: Option<(Ranking, GroundTruth)> =
        if metrics.iter().any(|m| !matches!(m, Metric::Auc)) {
            let queries = load_bit_matrix(require_path(&cfg.paths.queries, "queries")?)?;
            let gt = GroundTruth::load(
                require_path(&cfg.paths.ground_truth, "ground_truth")?,
                database.rows(),
            )?;
            Some((rank_all(&queries, &database)?, gt))
        } else {
            None
        };
    let auc: Option<f64> = if metrics.iter().any(|m| matches!(m, Metric::Auc)) {
        let pairs = load_pairs(require_path(&cfg.paths.pairs, "pairs")?, database.rows())?;
        let (m, n) = pair_distances(&database, &pairs)?;
        Some(roc_auc(&to_f64(&m), &to_f64(&n))?)
    } else {
        None
    };

    let mut rows = Vec::with_capacity(metrics.len());
    for m in &metrics {
        let value = match m {
            Metric::Auc => auc.expect("loaded above"),
            rank => {
                let (rk, gt) = ranked.as_ref().expect("loaded above");
                rank_metric(*rank, rk, gt)?
            }
        };
        rows.push(MetricRow {
            metric: m.name(),
            value,
        });
    }

    let config_text = effective_toml(cfg)?;
    let report = EvalReport {
        scheme: cfg.scheme.to_string(),
        bits: database.bits(),
        seed: cfg.seed,
        config_hash: config_hash(&config_text),
        metrics: rows,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::invalid(format!("report serialization: {e}")))?;

    ensure_out_dir(out)?;
    write_text(&out.join(REPORT_JSON_FILE), &format!("{json}\n"))?;
    write_text(
        &out.join(REPORT_CSV_FILE),
        &metrics_csv(&report.scheme, report.bits, &report.metrics),
    )?;
    write_text(&out.join(CONFIG_FILE), &config_text)?;
    Ok(())
}

/// Train, encode and rank one scheme at one bit width, in memory.
fn compare_ranking(
    cfg: &CompareConfig,
    scheme: Scheme,
    bits: usize,
    seed: u64,
    features: &FeatureMatrix,
    queries: &FeatureMatrix,
) -> Result<Ranking> {
    match scheme {
        Scheme::Deephash => {
            let dims = cfg.architectures.get(&bits.to_string()).cloned();
            let arch = resolve_architecture(bits, features.dim(), dims.as_deref())?;
            let hp = cfg.rbm.to_hyperparams(seed);
            let (model, _) = train_stack(features, &arch, &hp)?;
            rank_all(&model.encode(queries)?, &model.encode(features)?)
        }
        Scheme::Lsh => {
            let model = lsh_train(features.dim(), bits, seed)?;
            rank_all(&lsh_encode(&model, queries)?, &lsh_encode(&model, features)?)
        }
        Scheme::Itq => {
            let (model, _) = itq_train(features, bits, cfg.itq.iterations, seed)?;
            rank_all(&itq_encode(&model, queries)?, &itq_encode(&model, features)?)
        }
        Scheme::Pq => {
            let blocks = pq_blocks(bits, cfg.pq.k)?;
            let model = pq_train(features, blocks, cfg.pq.k, seed)?;
            let codes = pq_encode(&model, features)?;
            let dists = pq_adc_distances(&model, queries, &codes)?;
            rank_by_scores(&dists, features.rows())
        }
    }
}

/// The full scheme-by-bits sweep: one long-format CSV with a row per
/// (scheme, bits, metric), rows ordered by scheme then bits then the
/// metric list. Product quantization ranks by asymmetric distance; the
/// hash schemes rank by Hamming distance.
pub fn cmd_compare(cfg: &CompareConfig, out: &Path) -> Result<()> {
    let metrics = parse_metrics(&cfg.metrics)?;
    if metrics.iter().any(|m| matches!(m, Metric::Auc)) {
        return Err(Error::InvalidConfig(
            "auc is pair-based and not supported by compare; use eval".into(),
        ));
    }
    if cfg.schemes.is_empty() || cfg.bits.is_empty() {
        return Err(Error::InvalidConfig(
            "compare needs at least one scheme and one bit width".into(),
        ));
    }
    cfg.rbm.to_hyperparams(cfg.seed).validate()?;

    let features = load_feature_matrix(require_path(&cfg.paths.features, "features")?)?;
    let queries = load_feature_matrix(require_path(&cfg.paths.queries, "queries")?)?;
    let gt = GroundTruth::load(
        require_path(&cfg.paths.ground_truth, "ground_truth")?,
        features.rows(),
    )?;

    let mut schemes = cfg.schemes.clone();
    schemes.sort();
    schemes.dedup();
    let mut bit_widths = cfg.bits.clone();
    bit_widths.sort_unstable();
    bit_widths.dedup();

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut csv = String::from("scheme,bits,metric,value\n");
    for &scheme in &schemes {
        for &bits in &bit_widths {
            let seed = master.random();
            let rk = compare_ranking(cfg, scheme, bits, seed, &features, &queries)?;
            for m in &metrics {
                let value = rank_metric(*m, &rk, &gt)?;
                csv.push_str(&format!("{scheme},{bits},{},{value}\n", m.name()));
            }
        }
    }

    ensure_out_dir(out)?;
    write_text(&out.join(COMPARE_FILE), &csv)?;
    write_text(&out.join(CONFIG_FILE), &effective_toml(cfg)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{save_feature_matrix, save_pairs};
    use crate::synthetic::{gaussian_clusters, matching_pairs, split_retrieval};
    use std::path::PathBuf;

    struct Corpus {
        dir: tempfile::TempDir,
        features: PathBuf,
        queries: PathBuf,
        ground_truth: PathBuf,
        pairs: PathBuf,
    }

    fn small_corpus(seed: u64) -> Corpus {
        let dir = tempfile::tempdir().unwrap();
        let corpus = gaussian_clusters(120, 16, 4, 5.0, 0.6, seed).unwrap();
        let task = split_retrieval(&corpus, 20, seed + 1).unwrap();
        let features = dir.path().join("db.dhf");
        let queries = dir.path().join("q.dhf");
        let ground_truth = dir.path().join("gt.txt");
        let pairs = dir.path().join("pairs.txt");
        save_feature_matrix(&features, &task.database).unwrap();
        save_feature_matrix(&queries, &task.queries).unwrap();
        task.ground_truth.save(&ground_truth).unwrap();
        let db_rows = task.database.rows();
        let p = matching_pairs(&task.db_labels, 30, seed + 2).unwrap();
        let p = expand_with_nonmatching(&p, db_rows, seed + 3).unwrap();
        save_pairs(&pairs, &p).unwrap();
        Corpus {
            dir,
            features,
            queries,
            ground_truth,
            pairs,
        }
    }

    fn base_config(c: &Corpus) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.bits = 8;
        cfg.architecture = Some(vec![16, 8]);
        cfg.rbm.epochs = 3;
        cfg.rbm.batch_size = 20;
        cfg.paths.features = Some(c.features.clone());
        cfg
    }

    #[test]
    fn train_encode_eval_pipeline_runs_end_to_end() {
        let c = small_corpus(1);
        let cfg = base_config(&c);
        let out = c.dir.path().join("run");
        cmd_train(&cfg, &out).unwrap();
        let model_path = out.join(MODEL_FILE);
        assert!(model_path.exists());
        assert!(out.join(TRAIN_LOG_FILE).exists());
        let emitted = std::fs::read_to_string(out.join(CONFIG_FILE)).unwrap();
        let back: RunConfig = toml::from_str(&emitted).unwrap();
        assert_eq!(back.architecture, Some(vec![16, 8]), "derived dims recorded");

        // Encode the database and the queries with the trained model.
        let mut enc = cfg.clone();
        enc.paths.model = Some(model_path.clone());
        let db_out = c.dir.path().join("db_codes");
        cmd_encode(&enc, &db_out).unwrap();
        enc.paths.features = Some(c.queries.clone());
        let q_out = c.dir.path().join("q_codes");
        cmd_encode(&enc, &q_out).unwrap();

        let mut ev = cfg.clone();
        ev.paths.queries = Some(q_out.join(CODES_FILE));
        ev.paths.database = Some(db_out.join(CODES_FILE));
        ev.paths.ground_truth = Some(c.ground_truth.clone());
        ev.paths.pairs = Some(c.pairs.clone());
        ev.eval.metrics = vec![
            "recall@5".into(),
            "map".into(),
            "auc".into(),
        ];
        let ev_out = c.dir.path().join("eval");
        cmd_eval(&ev, &ev_out).unwrap();
        let json = std::fs::read_to_string(ev_out.join(REPORT_JSON_FILE)).unwrap();
        for needle in ["recall@5", "\"map\"", "\"auc\"", "config_hash"] {
            assert!(json.contains(needle), "missing {needle} in {json}");
        }
        let csv = std::fs::read_to_string(ev_out.join(REPORT_CSV_FILE)).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("scheme,bits,metric,value"));
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.contains("deephash,8,recall@5,"));
    }

    #[test]
    fn baseline_schemes_write_their_magic() {
        let c = small_corpus(2);
        for (scheme, magic) in [
            (Scheme::Lsh, *b"DHLS"),
            (Scheme::Itq, *b"DHIQ"),
            (Scheme::Pq, *b"DHPQ"),
        ] {
            let mut cfg = base_config(&c);
            cfg.scheme = scheme;
            cfg.architecture = None;
            if scheme == Scheme::Pq {
                cfg.pq.k = 4;
            }
            let out = c.dir.path().join(format!("run_{scheme}"));
            cmd_train(&cfg, &out).unwrap();
            assert_eq!(peek_magic(&out.join(MODEL_FILE)).unwrap(), magic);

            let mut enc = cfg.clone();
            enc.paths.model = Some(out.join(MODEL_FILE));
            let enc_out = c.dir.path().join(format!("codes_{scheme}"));
            cmd_encode(&enc, &enc_out).unwrap();
            let expect = if scheme == Scheme::Pq { *b"DHPC" } else { *b"DHB1" };
            assert_eq!(peek_magic(&enc_out.join(CODES_FILE)).unwrap(), expect);
        }
    }

    #[test]
    fn missing_features_leaves_no_partial_output() {
        let c = small_corpus(3);
        let mut cfg = base_config(&c);
        cfg.paths.features = Some(c.dir.path().join("nope.dhf"));
        let out = c.dir.path().join("missing");
        assert!(cmd_train(&cfg, &out).is_err());
        assert!(!out.exists(), "out dir must not be created on failure");
    }

    #[test]
    fn finetune_zero_iterations_copies_model_bytes() {
        let c = small_corpus(4);
        let cfg = base_config(&c);
        let train_out = c.dir.path().join("pre");
        cmd_train(&cfg, &train_out).unwrap();
        let model_path = train_out.join(MODEL_FILE);
        let original = std::fs::read(&model_path).unwrap();

        let mut ft = cfg.clone();
        ft.paths.model = Some(model_path);
        ft.paths.pairs = Some(c.pairs.clone());
        ft.finetune.iterations = 0;
        let ft_out = c.dir.path().join("ft0");
        cmd_finetune(&ft, &ft_out).unwrap();
        assert_eq!(std::fs::read(ft_out.join(MODEL_FILE)).unwrap(), original);
    }

    #[test]
    fn finetune_writes_trajectory_when_checkpointing() {
        let c = small_corpus(5);
        let cfg = base_config(&c);
        let train_out = c.dir.path().join("pre");
        cmd_train(&cfg, &train_out).unwrap();

        let mut ft = cfg.clone();
        ft.paths.model = Some(train_out.join(MODEL_FILE));
        ft.paths.pairs = Some(c.pairs.clone());
        ft.paths.queries = Some(c.queries.clone());
        ft.paths.ground_truth = Some(c.ground_truth.clone());
        ft.finetune.iterations = 10;
        ft.finetune.batch = 8;
        ft.finetune.checkpoint_every = 5;
        ft.finetune.recall_r = 5;
        let ft_out = c.dir.path().join("ft");
        cmd_finetune(&ft, &ft_out).unwrap();

        let log = std::fs::read_to_string(ft_out.join(FINETUNE_LOG_FILE)).unwrap();
        assert!(log.starts_with("iteration,total_loss,loss_layer_1\n"));
        assert_eq!(log.lines().count(), 11);
        let traj = std::fs::read_to_string(ft_out.join(TRAJECTORY_FILE)).unwrap();
        assert!(traj.starts_with("iteration,recall@5\n"));
        assert_eq!(traj.lines().count(), 4, "snapshots at 0, 5, 10");
        let tuned = load_model(&ft_out.join(MODEL_FILE)).unwrap();
        assert_eq!(tuned.metadata()["finetune_loss"], "double");
    }

    #[test]
    fn eval_rejects_unknown_metric_names() {
        let c = small_corpus(6);
        let mut cfg = base_config(&c);
        cfg.eval.metrics = vec!["precision".into()];
        let err = cmd_eval(&cfg, c.dir.path()).unwrap_err().to_string();
        assert!(err.contains("recall@N"), "lists valid names: {err}");
    }

    #[test]
    fn compare_is_byte_identical_on_rerun() {
        let c = small_corpus(7);
        let mut cfg = CompareConfig::default();
        cfg.schemes = vec![Scheme::Pq, Scheme::Lsh, Scheme::Itq];
        cfg.bits = vec![16, 8];
        cfg.metrics = vec!["recall@5".into(), "map".into()];
        cfg.pq.k = 16;
        cfg.paths.features = Some(c.features.clone());
        cfg.paths.queries = Some(c.queries.clone());
        cfg.paths.ground_truth = Some(c.ground_truth.clone());

        let out1 = c.dir.path().join("cmp1");
        let out2 = c.dir.path().join("cmp2");
        cmd_compare(&cfg, &out1).unwrap();
        cmd_compare(&cfg, &out2).unwrap();
        let a = std::fs::read(out1.join(COMPARE_FILE)).unwrap();
        let b = std::fs::read(out2.join(COMPARE_FILE)).unwrap();
        assert_eq!(a, b);

        let text = String::from_utf8(a).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 3 * 2 * 2);
        // Sorted by scheme then bits, metrics in list order.
        assert!(lines[1].starts_with("itq,8,recall@5,"));
        assert!(lines[2].starts_with("itq,8,map,"));
        assert!(lines[3].starts_with("itq,16,recall@5,"));
        assert!(lines[5].starts_with("lsh,8,"));
        assert!(lines[9].starts_with("pq,8,"));
    }

    #[test]
    fn compare_rejects_auc_and_empty_lists() {
        let c = small_corpus(8);
        let mut cfg = CompareConfig::default();
        cfg.paths.features = Some(c.features.clone());
        cfg.paths.queries = Some(c.queries.clone());
        cfg.paths.ground_truth = Some(c.ground_truth.clone());
        cfg.metrics = vec!["auc".into()];
        assert!(cmd_compare(&cfg, c.dir.path()).is_err());
        cfg.metrics = vec!["map".into()];
        cfg.schemes.clear();
        assert!(cmd_compare(&cfg, c.dir.path()).is_err());
    }

    #[test]
    fn encode_threshold_source_changes_codes_only_for_shifted_data() {
        let c = small_corpus(9);
        let cfg = base_config(&c);
        let out = c.dir.path().join("pre");
        cmd_train(&cfg, &out).unwrap();

        // Shift the query distribution so self-computed thresholds differ.
        let q = load_feature_matrix(&c.queries).unwrap();
        let shifted: Vec<f32> = q.values().iter().map(|v| v + 3.0).collect();
        let sq = FeatureMatrix::new(q.rows(), q.dim(), shifted).unwrap();
        let sq_path = c.dir.path().join("shifted.dhf");
        save_feature_matrix(&sq_path, &sq).unwrap();

        let mut enc = cfg.clone();
        enc.paths.model = Some(out.join(MODEL_FILE));
        enc.paths.features = Some(sq_path);
        let train_out = c.dir.path().join("enc_train");
        cmd_encode(&enc, &train_out).unwrap();
        enc.encode.thresholds = ThresholdSource::SelfComputed;
        let self_out = c.dir.path().join("enc_self");
        cmd_encode(&enc, &self_out).unwrap();

        let a = load_bit_matrix(&train_out.join(CODES_FILE)).unwrap();
        let b = load_bit_matrix(&self_out.join(CODES_FILE)).unwrap();
        assert_ne!(a, b, "shifted data must binarize differently");
        assert_eq!((a.rows(), a.bits()), (b.rows(), b.bits()));
    }

    #[test]
    fn pq_block_math_validates() {
        assert_eq!(pq_blocks(64, 256).unwrap(), 8);
        assert_eq!(pq_blocks(12, 16).unwrap(), 3);
        assert!(pq_blocks(10, 256).is_err());
        assert!(pq_blocks(8, 3).is_err());
    }
}
