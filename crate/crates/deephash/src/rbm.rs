//! One binary RBM layer: conditional probabilities, CD-1 updates with
//! momentum, the hashing regularizer, bias centering, and deterministic
//! encoding.
//!
//! Training follows the usual stable CD-1 recipe: hidden states are sampled
//! binary on the positive phase, the reconstruction and the negative hidden
//! term use probabilities. The regularizer pulls hidden activations toward
//! stratified-uniform targets through the sigmoid cross-entropy gradient
//! `p - t` on the pre-activations, weighted by `lambda`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bits::BitMatrix;
use crate::error::{Error, Result};

/// Weight init scale; biases start at zero.
const INIT_STD: f64 = 0.01;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmHyperParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for RbmHyperParams {
    fn default() -> Self {
        RbmHyperParams {
            learning_rate: 0.001,
            momentum: 0.9,
            epochs: 30,
            batch_size: 100,
            lambda: 0.1,
            seed: 0,
        }
    }
}

impl RbmHyperParams {
    /// Full strictness for user-facing entry points. Library internals only
    /// require finite values so that zero-step experiments stay expressible.
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// One RBM layer with I visible and J hidden units. `center`, once set,
/// replaces the hidden bias in the encoding rule (the bias itself is kept
/// for fine-tuning).
#[derive(Debug, Clone, PartialEq)]
pub struct RbmLayer {
    w: Array2<f64>,
    b: Array1<f64>,
    c: Array1<f64>,
    center: Option<Array1<f64>>,
}

impl RbmLayer {
    /// Gaussian weights (std 0.01), zero biases, no centers.
    pub fn random(visible: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if visible == 0 || hidden == 0 {
            return Err(Error::invalid("layer dimensions must be >= 1"));
        }
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let w = Array2::from_shape_fn((visible, hidden), |_| normal.sample(rng));
        Ok(RbmLayer {
            w,
            b: Array1::zeros(hidden),
            c: Array1::zeros(visible),
            center: None,
        })
    }

    pub fn from_parts(
        w: Array2<f64>,
        b: Array1<f64>,
        c: Array1<f64>,
        center: Option<Array1<f64>>,
    ) -> Result<Self> {
        let (i, j) = w.dim();
        if i == 0 || j == 0 {
            return Err(Error::invalid("layer dimensions must be >= 1"));
        }
        if b.len() != j || c.len() != i {
            return Err(Error::invalid(format!(
                "bias lengths ({}, {}) inconsistent with {i}x{j} weights",
                b.len(),
                c.len()
            )));
        }
        if let Some(ref m) = center {
            if m.len() != j {
                return Err(Error::invalid(format!(
                    "center length {} != hidden count {j}",
                    m.len()
                )));
            }
        }
        let finite = w.iter().all(|x| x.is_finite())
            && b.iter().all(|x| x.is_finite())
            && c.iter().all(|x| x.is_finite())
            && center
                .as_ref()
                .is_none_or(|m| m.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        Ok(RbmLayer { w, b, c, center })
    }

    pub fn visible_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn b(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn c(&self) -> &Array1<f64> {
        &self.c
    }

    pub fn center(&self) -> Option<&Array1<f64>> {
        self.center.as_ref()
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Array2<f64>, &mut Array1<f64>) {
        (&mut self.w, &mut self.b)
    }

    fn check_visible(&self, found: usize, context: &'static str) -> Result<()> {
        if found != self.visible_dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.visible_dim(),
                found,
            });
        }
        Ok(())
    }

    /// Pre-activations w_j . z + b_j for a batch of real-valued rows.
    pub fn hidden_preactivations(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_visible(z.ncols(), "hidden_preactivations")?;
        Ok(z.dot(&self.w) + &self.b)
    }

    /// p(h_j = 1 | v) = sigmoid(w_j . v + b_j), row per batch item.
    pub fn hidden_probabilities(&self, v: &BitMatrix) -> Result<Array2<f64>> {
        self.check_visible(v.bits(), "hidden_probabilities")?;
        Ok(self.hidden_probabilities_dense(v.to_dense().view()))
    }

    pub(crate) fn hidden_probabilities_dense(&self, z: ArrayView2<f64>) -> Array2<f64> {
        (z.dot(&self.w) + &self.b).mapv_into(sigmoid)
    }

    /// p(v_i = 1 | h) = sigmoid(w_i . h + c_i).
    pub fn visible_probabilities(&self, h: &BitMatrix) -> Result<Array2<f64>> {
        if h.bits() != self.hidden_dim() {
            return Err(Error::DimensionMismatch {
                context: "visible_probabilities",
                expected: self.hidden_dim(),
                found: h.bits(),
            });
        }
        Ok(self.visible_probabilities_dense(h.to_dense().view()))
    }

    pub(crate) fn visible_probabilities_dense(&self, h: ArrayView2<f64>) -> Array2<f64> {
        (h.dot(&self.w.t()) + &self.c).mapv_into(sigmoid)
    }

    /// Replace the encoding threshold by the per-unit mean pre-activation
    /// (bias excluded) over `data`. The hidden bias is retained for
    /// fine-tuning but no longer participates in encoding.
    pub fn center_biases(&self, data: &BitMatrix) -> Result<RbmLayer> {
        self.check_visible(data.bits(), "center_biases")?;
        if data.rows() == 0 {
            return Err(Error::invalid("center_biases needs at least one row"));
        }
        let pre = data.to_dense().dot(&self.w);
        let center = pre.mean_axis(Axis(0)).expect("non-empty");
        let mut out = self.clone();
        out.center = Some(center);
        Ok(out)
    }

    /// Hard bits: with centers, bit_j = 1 iff w_j . v - center_j > 0;
    /// without, bit_j = 1 iff w_j . v + b_j > 0. Ties give 0.
    pub fn encode(&self, v: &BitMatrix) -> Result<BitMatrix> {
        self.check_visible(v.bits(), "encode")?;
        let pre = v.to_dense().dot(&self.w);
        let mut out = BitMatrix::zeros(v.rows(), self.hidden_dim());
        for i in 0..pre.nrows() {
            for j in 0..pre.ncols() {
                let shifted = match &self.center {
                    Some(m) => pre[[i, j]] - m[j],
                    None => pre[[i, j]] + self.b[j],
                };
                if shifted > 0.0 {
                    out.set(i, j, true);
                }
            }
        }
        Ok(out)
    }
}

/// Independent Bernoulli draws, bit = 1 with probability p. Row-major draw
/// order, so identical rng state gives identical output.
pub fn sample_bernoulli(p: &Array2<f64>, rng: &mut impl Rng) -> Result<BitMatrix> {
    if let Some(bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid(format!(
            "sample_bernoulli probability {bad} outside [0, 1]"
        )));
    }
    let mut out = BitMatrix::zeros(p.nrows(), p.ncols());
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            if rng.random::<f64>() < p[[i, j]] {
                out.set(i, j, true);
            }
        }
    }
    Ok(out)
}

/// Batch-by-hidden matrix of regularization targets. Each hidden unit's
/// column is a fresh random permutation of the stratified grid
/// (k + 0.5) / batch_size, so per-unit targets sample U(0,1) exactly
/// one per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix(Array2<f64>);

impl TargetMatrix {
    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn batch_size(&self) -> usize {
        self.0.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.0.ncols()
    }
}

pub fn make_targets(batch_size: usize, hidden: usize, rng: &mut impl Rng) -> Result<TargetMatrix> {
    if batch_size == 0 || hidden == 0 {
        return Err(Error::invalid("make_targets needs batch_size, hidden >= 1"));
    }
    let mut t = Array2::zeros((batch_size, hidden));
    let mut perm: Vec<usize> = (0..batch_size).collect();
    for j in 0..hidden {
        perm.shuffle(rng);
        for (alpha, &slot) in perm.iter().enumerate() {
            t[[alpha, j]] = (slot as f64 + 0.5) / batch_size as f64;
        }
    }
    Ok(TargetMatrix(t))
}

/// Gradient of the target cross-entropy w.r.t. pre-activations: p - t.
pub fn regularization_gradient(p: &Array2<f64>, t: &TargetMatrix) -> Result<Array2<f64>> {
    if p.dim() != t.0.dim() {
        return Err(Error::invalid(format!(
            "regularization_gradient shapes differ: {:?} vs {:?}",
            p.dim(),
            t.0.dim()
        )));
    }
    Ok(p - &t.0)
}

/// Summed cross-entropy between activations and targets,
/// -sum(t ln p + (1-t) ln(1-p)). Used for gradient checks and loss logging.
pub fn target_cross_entropy(p: &Array2<f64>, t: &TargetMatrix) -> Result<f64> {
    if p.dim() != t.0.dim() {
        return Err(Error::invalid(format!(
            "target_cross_entropy shapes differ: {:?} vs {:?}",
            p.dim(),
            t.0.dim()
        )));
    }
    let mut loss = 0.0;
    for (&pi, &ti) in p.iter().zip(t.0.iter()) {
        let pi = pi.clamp(1e-12, 1.0 - 1e-12);
        loss -= ti * pi.ln() + (1.0 - ti) * (1.0 - pi).ln();
    }
    Ok(loss)
}

/// Momentum state, one buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct Velocity {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub c: Array1<f64>,
}

impl Velocity {
    pub fn zeros(layer: &RbmLayer) -> Self {
        Velocity {
            w: Array2::zeros(layer.w.dim()),
            b: Array1::zeros(layer.hidden_dim()),
            c: Array1::zeros(layer.visible_dim()),
        }
    }
}

/// One CD-1 step with momentum on a minibatch of binary rows. Returns the
/// mean squared reconstruction error of the batch.
///
/// Gradient (ascent direction): positive statistics from (v0, p(h|v0)) with
/// binary hidden samples driving the reconstruction, probabilities
/// everywhere else, minus `lambda` times the regularization term on w and b
/// (never on c).
pub fn cd1_update(
    layer: &mut RbmLayer,
    v0: &BitMatrix,
    hp: &RbmHyperParams,
    t: &TargetMatrix,
    rng: &mut impl Rng,
    velocity: &mut Velocity,
) -> Result<f64> {
    layer.check_visible(v0.bits(), "cd1_update")?;
    let batch = v0.rows();
    if batch == 0 {
        return Err(Error::invalid("cd1_update needs a non-empty batch"));
    }
    if t.batch_size() != batch || t.hidden_dim() != layer.hidden_dim() {
        return Err(Error::invalid(format!(
            "target shape ({}, {}) does not match batch ({batch}, {})",
            t.batch_size(),
            t.hidden_dim(),
            layer.hidden_dim()
        )));
    }

    let v0d = v0.to_dense();
    let p0 = layer.hidden_probabilities_dense(v0d.view());
    let h0 = sample_bernoulli(&p0, rng)?.to_dense();
    let v1 = layer.visible_probabilities_dense(h0.view());
    let p1 = layer.hidden_probabilities_dense(v1.view());

    let n = batch as f64;
    let mut grad_w = (v0d.t().dot(&p0) - v1.t().dot(&p1)) / n;
    let mut grad_b = (p0.sum_axis(Axis(0)) - p1.sum_axis(Axis(0))) / n;
    let grad_c = (v0d.sum_axis(Axis(0)) - v1.sum_axis(Axis(0))) / n;

    if hp.lambda != 0.0 {
        let r = regularization_gradient(&p0, t)?;
        grad_w -= &(v0d.t().dot(&r) * (hp.lambda / n));
        grad_b -= &(r.sum_axis(Axis(0)) * (hp.lambda / n));
    }

    let finite = grad_w.iter().all(|x| x.is_finite())
        && grad_b.iter().all(|x| x.is_finite())
        && grad_c.iter().all(|x| x.is_finite());
    if !finite {
        return Err(Error::NonFiniteGradient {
            context: "cd1_update".into(),
        });
    }

    velocity.w.zip_mut_with(&grad_w, |v, &g| {
        *v = hp.momentum * *v + hp.learning_rate * g;
    });
    velocity.b.zip_mut_with(&grad_b, |v, &g| {
        *v = hp.momentum * *v + hp.learning_rate * g;
    });
    velocity.c.zip_mut_with(&grad_c, |v, &g| {
        *v = hp.momentum * *v + hp.learning_rate * g;
    });
    layer.w += &velocity.w;
    layer.b += &velocity.b;
    layer.c += &velocity.c;

    let diff = &v0d - &v1;
    Ok(diff.iter().map(|x| x * x).sum::<f64>() / (n * v0.bits() as f64))
}

/// Per-epoch training log entry. Activation statistics are per-hidden-unit
/// means of p(h|v) over the full training set at epoch end.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub reconstruction_error: f64,
    pub activation_mean: f64,
    pub activation_min: f64,
    pub activation_max: f64,
}

/// Train one layer with CD-1 over shuffled minibatches. Deterministic per
/// `hp.seed`; the trailing partial batch, if any, is kept and its targets
/// use the actual batch size.
pub fn train_layer(
    data: &BitMatrix,
    hidden: usize,
    hp: &RbmHyperParams,
) -> Result<(RbmLayer, Vec<EpochStats>)> {
    if data.rows() == 0 {
        return Err(Error::invalid("train_layer needs non-empty data"));
    }
    if hidden == 0 {
        return Err(Error::invalid("train_layer needs hidden >= 1"));
    }
    if hp.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut layer = RbmLayer::random(data.bits(), hidden, &mut rng)?;
    let mut velocity = Velocity::zeros(&layer);
    let mut stats = Vec::with_capacity(hp.epochs);
    let mut order: Vec<usize> = (0..data.rows()).collect();

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut sq_sum = 0.0;
        let mut row_sum = 0usize;
        for chunk in order.chunks(hp.batch_size) {
            let batch = data.select_rows(chunk);
            let t = make_targets(batch.rows(), hidden, &mut rng)?;
            let mse = cd1_update(&mut layer, &batch, hp, &t, &mut rng, &mut velocity)?;
            sq_sum += mse * batch.rows() as f64;
            row_sum += batch.rows();
        }
        let p = layer.hidden_probabilities(data)?;
        let bit_means = p.mean_axis(Axis(0)).expect("non-empty");
        stats.push(EpochStats {
            epoch,
            reconstruction_error: sq_sum / row_sum as f64,
            activation_mean: bit_means.mean().unwrap(),
            activation_min: bit_means.iter().copied().fold(f64::INFINITY, f64::min),
            activation_max: bit_means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    Ok((layer, stats))
}
