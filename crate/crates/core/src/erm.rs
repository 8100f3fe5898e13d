//! Multiclass logistic regression trained by SGD, with an L2 penalty that
//! may be biased toward a reference model.
//!
//! The objective for weights `W` (k×d, row-major) over a batch of `n`
//! examples is
//!
//! ```text
//! J(W) = 1/n Σ CE(softmax(W x_i), y_i) + λ ‖W − W_g‖²_F
//! ```
//!
//! where `W_g` is the bias model (the origin when absent).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub type ModelId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// A dense, row-major collection of labeled examples sharing one dimension
/// and one class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<u32>,
}

/// Borrowed window over a contiguous run of a [`Dataset`].
#[derive(Debug, Clone, Copy)]
pub struct DataView<'a> {
    dim: usize,
    classes: usize,
    features: &'a [f64],
    labels: &'a [u32],
}

impl Dataset {
    pub fn empty(dim: usize, classes: usize) -> Self {
        Self {
            dim,
            classes,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_examples(examples: Vec<LabeledExample>, dim: usize, classes: usize) -> Result<Self> {
        let mut ds = Self::empty(dim, classes);
        ds.features.reserve(examples.len() * dim);
        for ex in examples {
            ds.push(&ex.features, ex.label)?;
        }
        Ok(ds)
    }

    pub fn from_parts(features: Vec<f64>, labels: Vec<u32>, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                actual: features.len(),
                context: "feature buffer length",
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                classes,
            });
        }
        Ok(Self {
            dim,
            classes,
            features,
            labels,
        })
    }

    pub fn push(&mut self, features: &[f64], label: usize) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: features.len(),
                context: "example features",
            });
        }
        if label >= self.classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.classes,
            });
        }
        self.features.extend_from_slice(features);
        self.labels.push(label as u32);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Raises the class count, e.g. when a test split lacks the top label.
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if classes < self.classes {
            return Err(Error::invalid("classes", "cannot shrink class count"));
        }
        self.classes = classes;
        Ok(self)
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn view(&self) -> DataView<'_> {
        DataView {
            dim: self.dim,
            classes: self.classes,
            features: &self.features,
            labels: &self.labels,
        }
    }

    /// Examples `[a, b]`, both ends inclusive.
    pub fn range(&self, a: usize, b: usize) -> Result<DataView<'_>> {
        if b >= self.len() {
            return Err(Error::StreamExhausted {
                needed: b,
                available: self.len(),
            });
        }
        if a > b {
            return Err(Error::invalid("interval", format!("[{a}, {b}] is reversed")));
        }
        Ok(DataView {
            dim: self.dim,
            classes: self.classes,
            features: &self.features[a * self.dim..(b + 1) * self.dim],
            labels: &self.labels[a..=b],
        })
    }

    /// Copies the examples at `indices`, in the given order.
    pub fn select(view: DataView<'_>, indices: &[usize]) -> Self {
        let mut out = Self::empty(view.dim, view.classes);
        out.features.reserve(indices.len() * view.dim);
        for &i in indices {
            out.features.extend_from_slice(view.features(i));
            out.labels.push(view.labels[i]);
        }
        out
    }

    /// Rescales every example with `‖x‖₁ > cap` onto the L1 ball of radius `cap`.
    pub fn clip_l1(&mut self, cap: f64) {
        for row in self.features.chunks_mut(self.dim) {
            let norm: f64 = row.iter().map(|v| v.abs()).sum();
            if norm > cap {
                let s = cap / norm;
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            dim: self.dim,
            classes: self.classes,
            features: self.features[..n * self.dim].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Returns a copy with examples reordered by a seeded permutation.
    pub fn shuffled(&self, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::child(seed, 0, Purpose::Data));
        Self::select(self.view(), &order)
    }

    pub fn append(&mut self, other: &Dataset) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
                context: "appended dataset",
            });
        }
        self.classes = self.classes.max(other.classes);
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }
}

impl<'a> From<&'a Dataset> for DataView<'a> {
    fn from(ds: &'a Dataset) -> Self {
        ds.view()
    }
}

impl<'a> DataView<'a> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self, i: usize) -> &'a [f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            dim: self.dim,
            classes: self.classes,
            features: self.features.to_vec(),
            labels: self.labels.to_vec(),
        }
    }

    /// Largest L2 norm of any example.
    pub fn max_row_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| self.features(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Frobenius norm of the feature matrix.
    pub fn frobenius(&self) -> f64 {
        self.features.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Where a model came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Stream interval `[a, b]` the model was trained on.
    pub interval: Option<(usize, usize)>,
    /// Id of the model used as the regularization origin.
    pub regularizer: Option<ModelId>,
    /// Laplace scale added to the weights, if any.
    pub noise_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    classes: usize,
    dim: usize,
    w: Vec<f64>,
    pub meta: Provenance,
}

impl ModelWeights {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            w: vec![0.0; classes * dim],
            meta: Provenance::default(),
        }
    }

    pub fn from_vec(classes: usize, dim: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != classes * dim {
            return Err(Error::DimensionMismatch {
                expected: classes * dim,
                actual: w.len(),
                context: "weight buffer",
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("weights", "non-finite entry"));
        }
        Ok(Self {
            classes,
            dim,
            w,
            meta: Provenance::default(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.w[c * self.dim..(c + 1) * self.dim]
    }

    pub fn frobenius_distance(&self, other: &ModelWeights) -> f64 {
        self.w
            .iter()
            .zip(&other.w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..self.classes {
            let s = dot(self.row(c), x);
            if s > best_score {
                best = c;
                best_score = s;
            }
        }
        best
    }

    fn check_compatible(&self, data: &DataView<'_>) -> Result<()> {
        if data.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: data.dim(),
                context: "data vs model dimension",
            });
        }
        if data.classes() > self.classes {
            return Err(Error::DimensionMismatch {
                expected: self.classes,
                actual: data.classes(),
                context: "data vs model classes",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Inverse learning rate: step `i` (1-based) uses `1 / (gamma * i)`.
    pub gamma: f64,
    pub iterations: usize,
    pub minibatch: usize,
    /// Minimum number of full passes over the data.
    pub passes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            iterations: 500,
            minibatch: 256,
            passes: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        if self.minibatch == 0 {
            return Err(Error::invalid("minibatch", "must be at least 1"));
        }
        if self.passes == 0 {
            return Err(Error::invalid("passes", "must be at least 1"));
        }
        Ok(())
    }

    /// Number of SGD steps on `n` examples: `iterations`, extended if needed
    /// so that at least `passes` epochs are seen.
    pub fn steps_for(&self, n: usize) -> usize {
        let batch = self.minibatch.min(n.max(1));
        let epoch_steps = n.div_ceil(batch);
        self.iterations.max(self.passes * epoch_steps)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RegularizerSpec<'a> {
    pub lambda: f64,
    pub bias: Option<&'a ModelWeights>,
}

impl<'a> RegularizerSpec<'a> {
    pub fn origin(lambda: f64) -> Self {
        Self { lambda, bias: None }
    }

    pub fn toward(lambda: f64, bias: &'a ModelWeights) -> Self {
        Self {
            lambda,
            bias: Some(bias),
        }
    }

    fn validate(&self, classes: usize, dim: usize) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be positive"));
        }
        if let Some(b) = self.bias {
            if b.classes != classes || b.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: classes * dim,
                    actual: b.classes * b.dim,
                    context: "bias model shape",
                });
            }
        }
        Ok(())
    }

    fn bias_at(&self, idx: usize) -> f64 {
        self.bias.map_or(0.0, |b| b.w[idx])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds the cross-entropy gradient of one example into `grad` (scaled by
/// `weight`) and returns its loss. `scores` is scratch space of length k.
fn accumulate_example(
    w: &[f64],
    dim: usize,
    x: &[f64],
    label: usize,
    weight: f64,
    scores: &mut [f64],
    grad: &mut [f64],
) -> f64 {
    let classes = scores.len();
    for c in 0..classes {
        scores[c] = dot(&w[c * dim..(c + 1) * dim], x);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    let loss = total.ln() + max - (scores[label].ln() + max);
    for c in 0..classes {
        let p = scores[c] / total;
        let coeff = weight * (p - if c == label { 1.0 } else { 0.0 });
        if coeff != 0.0 {
            let g = &mut grad[c * dim..(c + 1) * dim];
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += coeff * xj;
            }
        }
    }
    loss
}

fn regularizer_terms(w: &[f64], reg: &RegularizerSpec<'_>, grad: &mut [f64]) -> f64 {
    let mut penalty = 0.0;
    for (idx, (&wi, gi)) in w.iter().zip(grad.iter_mut()).enumerate() {
        let diff = wi - reg.bias_at(idx);
        penalty += diff * diff;
        *gi += 2.0 * reg.lambda * diff;
    }
    reg.lambda * penalty
}

/// Mean softmax cross-entropy over `batch` plus `λ‖W − W_g‖²_F`, with its
/// exact gradient (k×d, row-major).
pub fn loss_and_gradient(
    w: &ModelWeights,
    batch: DataView<'_>,
    reg: &RegularizerSpec<'_>,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyData("loss_and_gradient"));
    }
    w.check_compatible(&batch)?;
    reg.validate(w.classes, w.dim)?;
    let mut grad = vec![0.0; w.w.len()];
    let mut scores = vec![0.0; w.classes];
    let inv_n = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for i in 0..batch.len() {
        loss += accumulate_example(
            &w.w,
            w.dim,
            batch.features(i),
            batch.label(i),
            inv_n,
            &mut scores,
            &mut grad,
        );
    }
    loss *= inv_n;
    loss += regularizer_terms(&w.w, reg, &mut grad);
    Ok((loss, grad))
}

/// Objective value only.
pub fn objective(w: &ModelWeights, batch: DataView<'_>, reg: &RegularizerSpec<'_>) -> Result<f64> {
    loss_and_gradient(w, batch, reg).map(|(l, _)| l)
}

/// Minibatch SGD with step size `1/(γ·i)` starting from the bias model (or
/// zero). Deterministic in `(data, reg, cfg)`.
pub fn sgd_train(data: DataView<'_>, reg: &RegularizerSpec<'_>, cfg: &TrainConfig) -> Result<ModelWeights> {
    if data.is_empty() {
        return Err(Error::EmptyData("sgd_train"));
    }
    cfg.validate()?;
    let (classes, dim) = (data.classes(), data.dim());
    reg.validate(classes, dim)?;

    let mut model = match reg.bias {
        Some(b) => {
            let mut m = b.clone();
            m.meta = Provenance::default();
            m
        }
        None => ModelWeights::zeros(classes, dim),
    };

    let n = data.len();
    let batch = cfg.minibatch.min(n);
    let steps = cfg.steps_for(n);
    let mut rng = rng::generator(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut grad = vec![0.0; classes * dim];
    let mut scores = vec![0.0; classes];
    let inv_b = 1.0 / batch as f64;
    for iteration in 1..=steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..batch {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            loss += accumulate_example(
                &model.w,
                dim,
                data.features(i),
                data.label(i),
                inv_b,
                &mut scores,
                &mut grad,
            );
        }
        loss = loss * inv_b + regularizer_terms(&model.w, reg, &mut grad);
        if !loss.is_finite() {
            return Err(Error::NonFinite { iteration });
        }
        let step = 1.0 / (cfg.gamma * iteration as f64);
        for (wi, gi) in model.w.iter_mut().zip(&grad) {
            *wi -= step * gi;
        }
    }
    if model.w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { iteration: steps });
    }
    Ok(model)
}

/// SGD on the objective biased toward `bias`, initialized at `bias`.
pub fn biased_erm_minimize(
    data: DataView<'_>,
    bias: &ModelWeights,
    lambda: f64,
    cfg: &TrainConfig,
) -> Result<ModelWeights> {
    sgd_train(data, &RegularizerSpec::toward(lambda, bias), cfg)
}

/// Euclidean norm of the full-batch objective gradient; a diagnostic for
/// how far a fixed-budget SGD run is from the exact minimizer.
pub fn gradient_norm(w: &ModelWeights, data: DataView<'_>, reg: &RegularizerSpec<'_>) -> Result<f64> {
    let (_, g) = loss_and_gradient(w, data, reg)?;
    Ok(g.iter().map(|v| v * v).sum::<f64>().sqrt())
}

pub enum LipschitzMode<'a> {
    /// Data-independent bound for `samples` rows with per-row norm at most
    /// `feature_cap`. This is the value to calibrate noise with.
    PublicBound {
        classes: usize,
        samples: usize,
        feature_cap: f64,
    },
    /// `(k−1)/(2mk)·‖X‖_F` evaluated on actual data. Reads private data.
    DataDiagnostic(DataView<'a>),
}

pub fn lipschitz_constant(mode: LipschitzMode<'_>) -> Result<f64> {
    let (k, m, norm) = match mode {
        LipschitzMode::PublicBound {
            classes,
            samples,
            feature_cap,
        } => {
            if feature_cap < 0.0 {
                return Err(Error::invalid("feature_cap", "must be nonnegative"));
            }
            (classes, samples, feature_cap * (samples as f64).sqrt())
        }
        LipschitzMode::DataDiagnostic(view) => (view.classes(), view.len(), view.frobenius()),
    };
    if m == 0 {
        return Err(Error::invalid("m", "sample count must be positive"));
    }
    if k == 0 {
        return Err(Error::invalid("k", "class count must be positive"));
    }
    let (k, m) = (k as f64, m as f64);
    Ok((k - 1.0) / (2.0 * m * k) * norm)
}

pub fn evaluate_accuracy(w: &ModelWeights, data: DataView<'_>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData("evaluate_accuracy"));
    }
    w.check_compatible(&data)?;
    let correct = (0..data.len())
        .filter(|&i| w.predict(data.features(i)) == data.label(i))
        .count();
    Ok(correct as f64 / data.len() as f64)
}
