//! Weakly-supervised Siamese fine-tuning of a pretrained stack.
//!
//! Both branches share the layer weights. During fine-tuning activations
//! stay continuous (sigmoids, no thresholding); a contrastive loss is
//! applied to the activation distance at every layer and the per-layer
//! losses are summed unweighted, so each weight matrix receives gradient
//! both from its own layer's loss and, through backprop, from all deeper
//! ones. Updates are plain SGD on the minibatch mean. Visible biases and
//! centers do not appear in the forward pass; centers are recomputed once
//! fine-tuning ends.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::io::{binarize, FeatureMatrix, PairSet};
use crate::stack::{round_layer_to_f32, DeepHashModel};

/// Which contrastive loss drives the updates.
///
/// With margin m2 shared, the two losses coincide on non-matching pairs;
/// they differ on matching pairs, where the single-margin loss keeps pulling
/// at any distance while the double-margin loss goes quiet inside m1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    SingleMargin,
    DoubleMargin,
}

/// Per-layer margins in squared-distance units of each layer's activations.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginConfig {
    m1: Vec<f64>,
    m2: Vec<f64>,
}

impl MarginConfig {
    pub fn new(m1: Vec<f64>, m2: Vec<f64>) -> Result<Self> {
        if m1.len() != m2.len() || m1.is_empty() {
            return Err(Error::invalid(
                "margin lists must be non-empty and equal length",
            ));
        }
        if m1
            .iter()
            .chain(&m2)
            .any(|m| !m.is_finite() || *m < 0.0)
        {
            return Err(Error::invalid("margins must be finite and >= 0"));
        }
        Ok(MarginConfig { m1, m2 })
    }

    /// Equal matching/non-matching margins, the auto-tuned shape.
    pub fn uniform(m: Vec<f64>) -> Result<Self> {
        MarginConfig::new(m.clone(), m)
    }

    pub fn depth(&self) -> usize {
        self.m1.len()
    }

    pub fn m1(&self) -> &[f64] {
        &self.m1
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Pairs per SGD step. Batches at least as large as the pair list make
    /// every step full-batch and consume no randomness.
    pub batch: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            learning_rate: 0.01,
            iterations: 100,
            batch: 32,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    /// Strict bounds for user-facing entry points; the library itself also
    /// accepts zero learning rate and zero iterations for no-op runs.
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Continuous activations of every layer for a batch of binarized inputs;
/// index 0 is layer 1's output.
#[derive(Debug, Clone)]
pub struct ActivationStack {
    layers: Vec<Array2<f64>>,
}

impl ActivationStack {
    pub fn layers(&self) -> &[Array2<f64>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &Array2<f64> {
        &self.layers[l]
    }
}

/// z^l = sigmoid(W^l z^{l-1} + b^l) with z^0 the binarized input rows.
pub fn forward_activations(model: &DeepHashModel, v: &BitMatrix) -> Result<ActivationStack> {
    if v.bits() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward_activations",
            expected: model.input_dim(),
            found: v.bits(),
        });
    }
    let mut z = v.to_dense();
    let mut layers = Vec::with_capacity(model.depth());
    for layer in model.layers() {
        z = layer.hidden_probabilities_dense(z.view());
        layers.push(z.clone());
    }
    Ok(ActivationStack { layers })
}

fn squared_distance(za: ArrayView1<f64>, zb: ArrayView1<f64>) -> f64 {
    za.iter()
        .zip(zb.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// y d^2 + (1-y) max(m - d^2, 0).
pub fn single_margin_loss(
    za: ArrayView1<f64>,
    zb: ArrayView1<f64>,
    matching: bool,
    m: f64,
) -> Result<f64> {
    if za.len() != zb.len() {
        return Err(Error::DimensionMismatch {
            context: "single_margin_loss",
            expected: za.len(),
            found: zb.len(),
        });
    }
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::invalid(format!("margin must be > 0, got {m}")));
    }
    let d2 = squared_distance(za, zb);
    Ok(if matching { d2 } else { (m - d2).max(0.0) })
}

/// y max(d^2 - m1, 0) + (1-y) max(m2 - d^2, 0).
pub fn double_margin_loss(
    za: ArrayView1<f64>,
    zb: ArrayView1<f64>,
    matching: bool,
    m1: f64,
    m2: f64,
) -> Result<f64> {
    if za.len() != zb.len() {
        return Err(Error::DimensionMismatch {
            context: "double_margin_loss",
            expected: za.len(),
            found: zb.len(),
        });
    }
    if m1 < 0.0 || m2 < 0.0 || !m1.is_finite() || !m2.is_finite() {
        return Err(Error::invalid(format!(
            "margins must be finite and >= 0, got ({m1}, {m2})"
        )));
    }
    let d2 = squared_distance(za, zb);
    Ok(if matching {
        (d2 - m1).max(0.0)
    } else {
        (m2 - d2).max(0.0)
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per layer: m = (median matching d^2 + median non-matching d^2) / 2 on the
/// continuous activations; m1 = m2 = m. Needs both labels present.
pub fn estimate_margins(
    model: &DeepHashModel,
    pairs: &PairSet,
    x: &FeatureMatrix,
) -> Result<MarginConfig> {
    let matching = pairs.matching_count();
    if matching == 0 || matching == pairs.len() {
        return Err(Error::invalid(
            "estimate_margins needs both matching and non-matching pairs",
        ));
    }
    check_pair_range(pairs, x.rows())?;
    let z0 = binarize(x, model.thresholds())?;
    let acts = forward_activations(model, &z0)?;
    let mut m = Vec::with_capacity(model.depth());
    for l in 0..model.depth() {
        let z = acts.layer(l);
        let mut dm = Vec::with_capacity(matching);
        let mut dn = Vec::with_capacity(pairs.len() - matching);
        for p in pairs.pairs() {
            let d2 = squared_distance(z.row(p.a), z.row(p.b));
            if p.matching {
                dm.push(d2);
            } else {
                dn.push(d2);
            }
        }
        m.push(0.5 * (median(&mut dm) + median(&mut dn)));
    }
    MarginConfig::uniform(m)
}

fn check_pair_range(pairs: &PairSet, rows: usize) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::invalid("pair set is empty"));
    }
    for p in pairs.pairs() {
        if p.a >= rows || p.b >= rows {
            return Err(Error::invalid(format!(
                "pair ({}, {}) out of range for {rows} feature rows",
                p.a, p.b
            )));
        }
    }
    Ok(())
}

fn check_margins(mc: &MarginConfig, depth: usize, loss: LossVariant) -> Result<()> {
    if mc.depth() != depth {
        return Err(Error::DimensionMismatch {
            context: "margins vs model depth",
            expected: depth,
            found: mc.depth(),
        });
    }
    if loss == LossVariant::SingleMargin && mc.m2.iter().any(|&m| m <= 0.0) {
        return Err(Error::invalid("single-margin loss needs margins > 0"));
    }
    Ok(())
}

/// Loss derivative w.r.t. d^2 for one pair at one layer. The hinge
/// subgradient at d^2 == margin is 0 (the inactive branch).
fn loss_coefficient(d2: f64, matching: bool, m1: f64, m2: f64, loss: LossVariant) -> f64 {
    match (loss, matching) {
        (LossVariant::SingleMargin, true) => 1.0,
        (LossVariant::DoubleMargin, true) => {
            if d2 > m1 {
                1.0
            } else {
                0.0
            }
        }
        (_, false) => {
            if d2 < m2 {
                -1.0
            } else {
                0.0
            }
        }
    }
}

fn loss_value(d2: f64, matching: bool, m1: f64, m2: f64, loss: LossVariant) -> f64 {
    match (loss, matching) {
        (LossVariant::SingleMargin, true) => d2,
        (LossVariant::DoubleMargin, true) => (d2 - m1).max(0.0),
        (_, false) => (m2 - d2).max(0.0),
    }
}

/// Mean total objective over a batch plus its analytic gradients.
/// `za0`/`zb0` are the binarized inputs of the two branches, row i of each
/// forming pair i with label `labels[i]`.
pub fn objective_with_gradients(
    model: &DeepHashModel,
    za0: &Array2<f64>,
    zb0: &Array2<f64>,
    labels: &[bool],
    mc: &MarginConfig,
    loss: LossVariant,
) -> Result<(f64, Vec<f64>, Vec<Array2<f64>>, Vec<Array1<f64>>)> {
    let batch = labels.len();
    if batch == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if za0.nrows() != batch || zb0.nrows() != batch {
        return Err(Error::invalid("branch row counts must match labels"));
    }
    if za0.ncols() != model.input_dim() || zb0.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "objective_with_gradients input",
            expected: model.input_dim(),
            found: za0.ncols(),
        });
    }
    check_margins(mc, model.depth(), loss)?;

    let depth = model.depth();
    // Forward both branches; index 0 holds the inputs, 1..=L the layers.
    let mut za = Vec::with_capacity(depth + 1);
    let mut zb = Vec::with_capacity(depth + 1);
    za.push(za0.clone());
    zb.push(zb0.clone());
    for layer in model.layers() {
        za.push(layer.hidden_probabilities_dense(za.last().unwrap().view()));
        zb.push(layer.hidden_probabilities_dense(zb.last().unwrap().view()));
    }

    // Per-layer distances, losses and hinge coefficients.
    let mut layer_losses = vec![0.0; depth];
    let mut coefs: Vec<Array1<f64>> = Vec::with_capacity(depth);
    for l in 1..=depth {
        let (m1, m2) = (mc.m1[l - 1], mc.m2[l - 1]);
        let mut coef = Array1::zeros(batch);
        for i in 0..batch {
            let d2 = squared_distance(za[l].row(i), zb[l].row(i));
            layer_losses[l - 1] += loss_value(d2, labels[i], m1, m2, loss);
            coef[i] = loss_coefficient(d2, labels[i], m1, m2, loss);
        }
        layer_losses[l - 1] /= batch as f64;
        coefs.push(coef);
    }
    let total: f64 = layer_losses.iter().sum();

    // Backward pass, deepest layer first. The shared weights collect
    // contributions from both branches.
    let scale = 1.0 / batch as f64;
    let mut grads_w = vec![Array2::zeros((0, 0)); depth];
    let mut grads_b = vec![Array1::zeros(0); depth];
    let mut delta_a: Option<Array2<f64>> = None;
    let mut delta_b: Option<Array2<f64>> = None;
    for l in (1..=depth).rev() {
        let coef2 = coefs[l - 1].view().insert_axis(Axis(1));
        let diff = &za[l] - &zb[l];
        let mut gza = &diff * &coef2 * 2.0;
        let mut gzb = -gza.clone();
        if let (Some(da), Some(db)) = (&delta_a, &delta_b) {
            let wt = model.layers()[l].w().t();
            gza += &da.dot(&wt);
            gzb += &db.dot(&wt);
        }
        let sig_a = &za[l] * &(1.0 - &za[l]);
        let sig_b = &zb[l] * &(1.0 - &zb[l]);
        let da = gza * sig_a;
        let db = gzb * sig_b;
        grads_w[l - 1] = (za[l - 1].t().dot(&da) + zb[l - 1].t().dot(&db)) * scale;
        grads_b[l - 1] = (da.sum_axis(Axis(0)) + db.sum_axis(Axis(0))) * scale;
        delta_a = Some(da);
        delta_b = Some(db);
    }

    Ok((total, layer_losses, grads_w, grads_b))
}

/// Mean total loss of a pair set under the model, no gradients. Used for
/// logs and finite-difference checks.
pub fn total_loss(
    model: &DeepHashModel,
    pairs: &PairSet,
    x: &FeatureMatrix,
    mc: &MarginConfig,
    loss: LossVariant,
) -> Result<f64> {
    check_pair_range(pairs, x.rows())?;
    check_margins(mc, model.depth(), loss)?;
    let z0 = binarize(x, model.thresholds())?;
    let acts = forward_activations(model, &z0)?;
    let mut total = 0.0;
    for l in 0..model.depth() {
        let z = acts.layer(l);
        let (m1, m2) = (mc.m1[l], mc.m2[l]);
        for p in pairs.pairs() {
            let d2 = squared_distance(z.row(p.a), z.row(p.b));
            total += loss_value(d2, p.matching, m1, m2, loss);
        }
    }
    Ok(total / pairs.len() as f64)
}

/// One row of the fine-tuning trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneLogEntry {
    pub iteration: usize,
    pub total_loss: f64,
    pub layer_losses: Vec<f64>,
}

/// Round every layer through f32, then recompute centers along the hard-bit
/// chain, exactly as pretraining does.
fn finalize(model: &DeepHashModel, z0: &BitMatrix) -> Result<DeepHashModel> {
    let mut z = z0.clone();
    let mut layers = Vec::with_capacity(model.depth());
    for layer in model.layers() {
        let mut centered = round_layer_to_f32(layer.clone()).center_biases(&z)?;
        centered = round_layer_to_f32(centered);
        z = centered.encode(&z)?;
        layers.push(centered);
    }
    DeepHashModel::new(
        model.thresholds().clone(),
        layers,
        model.metadata().clone(),
    )
}

/// SGD fine-tuning loop. Batches are drawn with replacement unless `batch`
/// covers the whole pair list, in which case every step is full-batch and
/// deterministic without randomness. `on_checkpoint` fires on the pristine
/// model (iteration 0) and after every `checkpoint_every`-th iteration with
/// a finalized snapshot (rounded, re-centered); pass 0 for no checkpoints.
pub fn run_finetune<F>(
    model: &DeepHashModel,
    pairs: &PairSet,
    x: &FeatureMatrix,
    mc: &MarginConfig,
    fc: &FinetuneConfig,
    loss: LossVariant,
    checkpoint_every: usize,
    mut on_checkpoint: F,
) -> Result<(DeepHashModel, Vec<FinetuneLogEntry>)>
where
    F: FnMut(usize, &DeepHashModel) -> Result<()>,
{
    check_pair_range(pairs, x.rows())?;
    check_margins(mc, model.depth(), loss)?;
    if x.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "run_finetune input",
            expected: model.input_dim(),
            found: x.dim(),
        });
    }
    if fc.batch == 0 {
        return Err(Error::InvalidConfig("batch must be >= 1".into()));
    }
    if !fc.learning_rate.is_finite() || fc.learning_rate < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "learning_rate must be finite and >= 0, got {}",
            fc.learning_rate
        )));
    }

    let z0_bits = binarize(x, model.thresholds())?;
    let z0 = z0_bits.to_dense();
    let mut rng = ChaCha8Rng::seed_from_u64(fc.seed);
    let mut work = model.clone();
    let full_batch = fc.batch >= pairs.len();
    let mut log = Vec::with_capacity(fc.iterations);

    if checkpoint_every > 0 {
        on_checkpoint(0, &finalize(&work, &z0_bits)?)?;
    }

    for it in 1..=fc.iterations {
        let indices: Vec<usize> = if full_batch {
            (0..pairs.len()).collect()
        } else {
            (0..fc.batch)
                .map(|_| rng.random_range(0..pairs.len()))
                .collect()
        };
        let batch = indices.len();
        let dim = model.input_dim();
        let mut za0 = Array2::zeros((batch, dim));
        let mut zb0 = Array2::zeros((batch, dim));
        let mut labels = Vec::with_capacity(batch);
        for (row, &k) in indices.iter().enumerate() {
            let p = pairs.pairs()[k];
            za0.row_mut(row).assign(&z0.row(p.a));
            zb0.row_mut(row).assign(&z0.row(p.b));
            labels.push(p.matching);
        }

        let (total, layer_losses, grads_w, grads_b) =
            objective_with_gradients(&work, &za0, &zb0, &labels, mc, loss)?;
        if let Some(bad) = layer_losses.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                layer: bad + 1,
                iteration: it,
            });
        }
        log.push(FinetuneLogEntry {
            iteration: it,
            total_loss: total,
            layer_losses,
        });

        for (l, layer) in work.layers_mut().iter_mut().enumerate() {
            let (w, b) = layer.params_mut();
            w.zip_mut_with(&grads_w[l], |p, &g| *p -= fc.learning_rate * g);
            b.zip_mut_with(&grads_b[l], |p, &g| *p -= fc.learning_rate * g);
        }

        if checkpoint_every > 0 && it % checkpoint_every == 0 {
            on_checkpoint(it, &finalize(&work, &z0_bits)?)?;
        }
    }

    let mut out = finalize(&work, &z0_bits)?;
    let meta = out.metadata_mut();
    meta.insert(
        "finetune_loss".into(),
        match loss {
            LossVariant::SingleMargin => "single".into(),
            LossVariant::DoubleMargin => "double".into(),
        },
    );
    meta.insert("finetune_iterations".into(), fc.iterations.to_string());
    meta.insert(
        "finetune_learning_rate".into(),
        fc.learning_rate.to_string(),
    );
    meta.insert("finetune_batch".into(), fc.batch.to_string());
    meta.insert("finetune_seed".into(), fc.seed.to_string());
    let fmt = |m: &[f64]| {
        m.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    meta.insert("finetune_m1".into(), fmt(&mc.m1));
    meta.insert("finetune_m2".into(), fmt(&mc.m2));
    Ok((out, log))
}

/// Double-margin fine-tuning, the default pipeline.
pub fn finetune(
    model: &DeepHashModel,
    pairs: &PairSet,
    x: &FeatureMatrix,
    mc: &MarginConfig,
    fc: &FinetuneConfig,
) -> Result<(DeepHashModel, Vec<FinetuneLogEntry>)> {
    run_finetune(
        model,
        pairs,
        x,
        mc,
        fc,
        LossVariant::DoubleMargin,
        0,
        |_, _| Ok(()),
    )
}

/// The single-margin variant, kept to reproduce its collapse pathology.
pub fn finetune_single_margin(
    model: &DeepHashModel,
    pairs: &PairSet,
    x: &FeatureMatrix,
    mc: &MarginConfig,
    fc: &FinetuneConfig,
) -> Result<(DeepHashModel, Vec<FinetuneLogEntry>)> {
    run_finetune(
        model,
        pairs,
        x,
        mc,
        fc,
        LossVariant::SingleMargin,
        0,
        |_, _| Ok(()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::Pair;
    use crate::rbm::RbmHyperParams;
    use crate::stack::{train_stack, Architecture};
    use crate::synthetic::{gaussian_clusters, matching_pairs};
    use ndarray::array;

    fn toy_model(dims: &[usize], seed: u64) -> (DeepHashModel, FeatureMatrix) {
        let corpus = gaussian_clusters(48, dims[0], 4, 6.0, 0.8, seed).unwrap();
        let arch = Architecture::new(dims.to_vec()).unwrap();
        let hp = RbmHyperParams {
            learning_rate: 0.05,
            momentum: 0.5,
            epochs: 4,
            batch_size: 16,
            lambda: 0.1,
            seed,
        };
        let (model, _) = train_stack(&corpus.features, &arch, &hp).unwrap();
        (model, corpus.features)
    }

    fn toy_pairs(labels: &[usize], seed: u64) -> PairSet {
        let m = matching_pairs(labels, 12, seed).unwrap();
        crate::io::expand_with_nonmatching(&m, labels.len(), seed + 1).unwrap()
    }

    #[test]
    fn forward_matches_layerwise_probabilities() {
        let (model, x) = toy_model(&[8, 4, 2], 3);
        let z0 = binarize(&x, model.thresholds()).unwrap();
        let acts = forward_activations(&model, &z0).unwrap();
        assert_eq!(acts.layers().len(), 2);

        let p1 = model.layers()[0].hidden_probabilities(&z0).unwrap();
        assert_eq!(acts.layer(0), &p1);
        let p2 = model.layers()[1].hidden_probabilities_dense(p1.view());
        assert_eq!(acts.layer(1), &p2);
        assert!(acts
            .layers()
            .iter()
            .all(|z| z.iter().all(|&v| v > 0.0 && v < 1.0)));
    }

    #[test]
    fn loss_hand_cases() {
        let za = array![1.0, 0.0];
        let zb = array![1.0, 0.0];
        assert_eq!(
            single_margin_loss(za.view(), zb.view(), true, 1.0).unwrap(),
            0.0
        );

        let za = array![2.0, 0.0];
        let zb = array![0.0, 0.0];
        // d^2 = 4.
        assert_eq!(
            single_margin_loss(za.view(), zb.view(), false, 3.0).unwrap(),
            0.0
        );
        let zc = array![1.0, 0.0];
        let zd = array![0.0, 0.0];
        // d^2 = 1.
        assert_eq!(
            single_margin_loss(zc.view(), zd.view(), false, 3.0).unwrap(),
            2.0
        );

        // Double margin: matching inside m1 exerts no pull.
        let ze = array![0.5f64.sqrt(), 0.0];
        let zf = array![0.0, 0.0];
        assert_eq!(
            double_margin_loss(ze.view(), zf.view(), true, 1.0, 1.0).unwrap(),
            0.0
        );
        let zg = array![3.0f64.sqrt(), 0.0];
        assert!(
            (double_margin_loss(zg.view(), zf.view(), true, 1.0, 1.0).unwrap() - 2.0).abs()
                < 1e-12
        );
        assert_eq!(
            double_margin_loss(zg.view(), zf.view(), false, 1.0, 1.0).unwrap(),
            0.0
        );

        assert!(single_margin_loss(za.view(), array![1.0].view(), true, 1.0).is_err());
        assert!(single_margin_loss(za.view(), zb.view(), true, 0.0).is_err());
        assert!(double_margin_loss(za.view(), zb.view(), true, -1.0, 1.0).is_err());
    }

    #[test]
    fn losses_symmetric_nonnegative_and_agree_on_nonmatching() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(1..6);
            let za = Array1::from_shape_fn(n, |_| rng.random_range(0.0..1.0));
            let zb = Array1::from_shape_fn(n, |_| rng.random_range(0.0..1.0));
            let m = rng.random_range(0.1..2.0);
            let matching = rng.random::<bool>();
            let s1 = single_margin_loss(za.view(), zb.view(), matching, m).unwrap();
            let s2 = single_margin_loss(zb.view(), za.view(), matching, m).unwrap();
            assert_eq!(s1, s2);
            assert!(s1 >= 0.0);
            let m1 = rng.random_range(0.0..2.0);
            let d1 = double_margin_loss(za.view(), zb.view(), matching, m1, m).unwrap();
            let d2 = double_margin_loss(zb.view(), za.view(), matching, m1, m).unwrap();
            assert_eq!(d1, d2);
            assert!(d1 >= 0.0);
            if !matching {
                assert_eq!(s1, d1, "losses must coincide on non-matching pairs");
            }
        }
    }

    #[test]
    fn margin_estimation_matches_median_oracle() {
        let (model, x) = toy_model(&[8, 4, 2], 7);
        let corpus_labels: Vec<usize> = (0..48).map(|i| i % 4).collect();
        let pairs = toy_pairs(&corpus_labels, 11);
        let mc = estimate_margins(&model, &pairs, &x).unwrap();
        assert_eq!(mc.depth(), 2);
        assert_eq!(mc.m1(), mc.m2());

        let z0 = binarize(&x, model.thresholds()).unwrap();
        let acts = forward_activations(&model, &z0).unwrap();
        for l in 0..2 {
            let z = acts.layer(l);
            let mut dm: Vec<f64> = pairs
                .pairs()
                .iter()
                .filter(|p| p.matching)
                .map(|p| squared_distance(z.row(p.a), z.row(p.b)))
                .collect();
            let mut dn: Vec<f64> = pairs
                .pairs()
                .iter()
                .filter(|p| !p.matching)
                .map(|p| squared_distance(z.row(p.a), z.row(p.b)))
                .collect();
            // Plain sorted-median with the same even-count convention.
            dm.sort_by(|a, b| a.partial_cmp(b).unwrap());
            dn.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mid = |v: &[f64]| {
                if v.len() % 2 == 1 {
                    v[v.len() / 2]
                } else {
                    0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
                }
            };
            let want = 0.5 * (mid(&dm) + mid(&dn));
            assert!((mc.m1()[l] - want).abs() < 1e-12);
        }

        let only_matching = PairSet::new(
            vec![Pair {
                a: 0,
                b: 1,
                matching: true,
            }],
            48,
        )
        .unwrap();
        assert!(estimate_margins(&model, &only_matching, &x).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (model, x) = toy_model(&[8, 4, 2], 13);
        let labels: Vec<usize> = (0..48).map(|i| i % 4).collect();
        let pairs = toy_pairs(&labels, 17);
        let mc = estimate_margins(&model, &pairs, &x).unwrap();

        for loss in [LossVariant::DoubleMargin, LossVariant::SingleMargin] {
            // Analytic gradient on the full pair set as one batch.
            let z0 = binarize(&x, model.thresholds()).unwrap().to_dense();
            let n = pairs.len();
            let mut za0 = Array2::zeros((n, 8));
            let mut zb0 = Array2::zeros((n, 8));
            let mut lab = Vec::new();
            for (row, p) in pairs.pairs().iter().enumerate() {
                za0.row_mut(row).assign(&z0.row(p.a));
                zb0.row_mut(row).assign(&z0.row(p.b));
                lab.push(p.matching);
            }
            let (loss0, _, grads_w, grads_b) =
                objective_with_gradients(&model, &za0, &zb0, &lab, &mc, loss).unwrap();
            assert!(loss0.is_finite());

            let h = 1e-5;
            let mut checked = 0;
            for l in 0..2 {
                for &(i, j) in &[(0usize, 0usize), (1, 2), (3, 1)] {
                    if i >= model.layers()[l].w().nrows() || j >= model.layers()[l].w().ncols()
                    {
                        continue;
                    }
                    let mut up = model.clone();
                    up.layers_mut()[l].params_mut().0[[i, j]] += h;
                    let mut dn = model.clone();
                    dn.layers_mut()[l].params_mut().0[[i, j]] -= h;
                    let lp = total_loss(&up, &pairs, &x, &mc, loss).unwrap();
                    let lm = total_loss(&dn, &pairs, &x, &mc, loss).unwrap();
                    let fd = (lp - lm) / (2.0 * h);
                    let g = grads_w[l][[i, j]];
                    let rel = (g - fd).abs() / fd.abs().max(1e-6);
                    assert!(rel < 1e-4, "w[{l}][{i},{j}]: {g} vs fd {fd}");
                    checked += 1;
                }
                let mut up = model.clone();
                up.layers_mut()[l].params_mut().1[0] += h;
                let mut dn = model.clone();
                dn.layers_mut()[l].params_mut().1[0] -= h;
                let lp = total_loss(&up, &pairs, &x, &mc, loss).unwrap();
                let lm = total_loss(&dn, &pairs, &x, &mc, loss).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let g = grads_b[l][0];
                let rel = (g - fd).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "b[{l}][0]: {g} vs fd {fd}");
            }
            assert!(checked >= 4);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (model, x) = toy_model(&[8, 4], 19);
        let labels: Vec<usize> = (0..48).map(|i| i % 4).collect();
        let pairs = toy_pairs(&labels, 23);
        let mc = estimate_margins(&model, &pairs, &x).unwrap();
        let fc = FinetuneConfig {
            learning_rate: 0.0,
            iterations: 5,
            batch: 1000,
            seed: 1,
        };
        let (out, log) = finetune(&model, &pairs, &x, &mc, &fc).unwrap();
        assert_eq!(log.len(), 5);
        assert_eq!(out.layers()[0].w(), model.layers()[0].w());
        assert_eq!(out.layers()[0].b(), model.layers()[0].b());
        assert_eq!(out.layers()[0].c(), model.layers()[0].c());
        // Unchanged weights re-center to the same centers.
        assert_eq!(
            out.layers()[0].center().unwrap(),
            model.layers()[0].center().unwrap()
        );
        let (single, _) = finetune_single_margin(&model, &pairs, &x, &mc, &fc).unwrap();
        assert_eq!(single.layers()[0].w(), model.layers()[0].w());
    }

    #[test]
    fn full_batch_descent_reduces_loss() {
        let (model, x) = toy_model(&[8, 4, 2], 29);
        let labels: Vec<usize> = (0..48).map(|i| i % 4).collect();
        let pairs = toy_pairs(&labels, 31);
        let mc = estimate_margins(&model, &pairs, &x).unwrap();
        let fc = FinetuneConfig {
            learning_rate: 0.2,
            iterations: 100,
            batch: usize::MAX,
            seed: 2,
        };
        let (_, log) = finetune(&model, &pairs, &x, &mc, &fc).unwrap();
        let head: f64 = log[..5].iter().map(|e| e.total_loss).sum::<f64>() / 5.0;
        let tail: f64 = log[95..].iter().map(|e| e.total_loss).sum::<f64>() / 5.0;
        assert!(
            tail <= head,
            "loss should not grow: head {head}, tail {tail}"
        );
    }

    #[test]
    fn single_margin_shrinks_matching_distances() {
        let (model, x) = toy_model(&[8, 4], 37);
        let labels: Vec<usize> = (0..48).map(|i| i % 4).collect();
        let pairs = matching_pairs(&labels, 16, 41).unwrap();
        let mc = MarginConfig::uniform(vec![1.0]).unwrap();
        let fc = FinetuneConfig {
            learning_rate: 0.5,
            iterations: 200,
            batch: usize::MAX,
            seed: 3,
        };
        let (tuned, log) = finetune_single_margin(&model, &pairs, &x, &mc, &fc).unwrap();
        assert!(
            log.last().unwrap().total_loss < log[0].total_loss,
            "matching-only loss must shrink"
        );
        // Mean matching distance decreases on the tuned model.
        let mean_d2 = |m: &DeepHashModel| {
            let z0 = binarize(&x, m.thresholds()).unwrap();
            let acts = forward_activations(m, &z0).unwrap();
            let z = acts.layer(0);
            pairs
                .pairs()
                .iter()
                .map(|p| squared_distance(z.row(p.a), z.row(p.b)))
                .sum::<f64>()
                / pairs.len() as f64
        };
        assert!(mean_d2(&tuned) < mean_d2(&model));
    }

    #[test]
    fn finetune_is_deterministic_and_checkpoints_fire() {
        let (model, x) = toy_model(&[8, 4], 43);
        let labels: Vec<usize> = (0..48).map(|i| i % 4).collect();
        let pairs = toy_pairs(&labels, 47);
        let mc = estimate_margins(&model, &pairs, &x).unwrap();
        let fc = FinetuneConfig {
            learning_rate: 0.1,
            iterations: 20,
            batch: 8,
            seed: 7,
        };
        let (a, la) = finetune(&model, &pairs, &x, &mc, &fc).unwrap();
        let (b, lb) = finetune(&model, &pairs, &x, &mc, &fc).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(a.metadata()["finetune_loss"], "double");
        assert!(a.metadata().contains_key("finetune_m1"));

        let mut seen = Vec::new();
        let (_, _) = run_finetune(
            &model,
            &pairs,
            &x,
            &mc,
            &fc,
            LossVariant::DoubleMargin,
            5,
            |it, snap| {
                assert!(snap.layers()[0].center().is_some());
                seen.push(it);
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(seen, vec![0, 5, 10, 15, 20]);
    }
}
