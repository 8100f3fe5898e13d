//! Laplace output perturbation, subsampling, and the noise-scale catalogue
//! used by the release schedulers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::erm::{self, DataView, Dataset, ModelWeights, RegularizerSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Laplace scale `b`.
    pub scale: f64,
    pub classes: usize,
    pub dim: usize,
    pub seed: u64,
}

impl NoiseSpec {
    fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid("scale", format!("{} is not a positive finite scale", self.scale)));
        }
        Ok(())
    }
}

/// Draws `classes × dim` i.i.d. Laplace(0, scale) values by inverse CDF.
pub fn laplace_vector(spec: &NoiseSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut g = rng::generator(spec.seed);
    Ok((0..spec.classes * spec.dim)
        .map(|_| laplace_draw(&mut g, spec.scale))
        .collect())
}

pub(crate) fn laplace_draw<R: Rng>(g: &mut R, scale: f64) -> f64 {
    loop {
        // u ∈ (-1/2, 1/2); the open end keeps ln away from 0
        let p: f64 = g.random();
        if p == 0.0 {
            continue;
        }
        let u = p - 0.5;
        return -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
    }
}

/// Which formula sets the Laplace scale of a release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    /// `4L/(λBε)`, constant across levels.
    MultiRes { block: usize },
    /// `4L/(λ·2^k·B·ε)`.
    MultiResSampled { block: usize, level: u32 },
    /// `4L/(λ·b₀·ε)`.
    Pberm { batch: usize },
    /// `4L/(λ·2^j·b₀·ε)`.
    PbermSampled { batch: usize, level: u32 },
    /// `6L/(λ·ε·2^(k−1)·w₀)` for a window of `(2^k − 1)·w₀` points.
    SlidingBase { w0: usize, k: u32 },
    /// `12L/(λ·w₀·ε)`.
    SlidingUpdate { w0: usize },
    /// `12L/(λ·2^j·w₀·ε)`.
    SlidingUpdateSampled { w0: usize, level: u32 },
    /// `2L/(λ·n·ε)`: a single ε-DP release on `n` points.
    OutputPerturbation { n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub lipschitz: f64,
    pub lambda: f64,
    pub eps: f64,
}

pub fn noise_scale(kind: NoiseKind, p: &NoiseParams) -> Result<f64> {
    for (name, v) in [("L", p.lipschitz), ("lambda", p.lambda), ("epsilon", p.eps)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, format!("{v} must be positive")));
        }
    }
    let pow2 = |level: u32| 2f64.powi(level as i32);
    let (numer, size) = match kind {
        NoiseKind::MultiRes { block } => (4.0, positive(block, "B")?),
        NoiseKind::MultiResSampled { block, level } => (4.0, pow2(level) * positive(block, "B")?),
        NoiseKind::Pberm { batch } => (4.0, positive(batch, "b0")?),
        NoiseKind::PbermSampled { batch, level } => (4.0, pow2(level) * positive(batch, "b0")?),
        NoiseKind::SlidingBase { w0, k } => {
            if k < 1 {
                return Err(Error::invalid("k", "window exponent must be at least 1"));
            }
            (6.0, pow2(k - 1) * positive(w0, "w0")?)
        }
        NoiseKind::SlidingUpdate { w0 } => (12.0, positive(w0, "w0")?),
        NoiseKind::SlidingUpdateSampled { w0, level } => (12.0, pow2(level) * positive(w0, "w0")?),
        NoiseKind::OutputPerturbation { n } => (2.0, positive(n, "n")?),
    };
    Ok(numer * p.lipschitz / (p.lambda * size * p.eps))
}

fn positive(v: usize, name: &'static str) -> Result<f64> {
    if v == 0 {
        return Err(Error::invalid(name, "must be positive"));
    }
    Ok(v as f64)
}

/// Privacy loss of adding Laplace(`scale`) noise to the minimizer of a
/// λ-regularized objective over `n` points with `L`-Lipschitz loss.
pub fn laplace_privacy_loss(lipschitz: f64, lambda: f64, n: usize, scale: f64) -> f64 {
    2.0 * lipschitz / (lambda * n as f64) / scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedModel {
    pub weights: ModelWeights,
    pub noise: Vec<f64>,
    pub noise_l1: f64,
    pub noise_l2: f64,
    pub spec: NoiseSpec,
}

impl PerturbedModel {
    pub fn norms_consistent(&self) -> bool {
        let (l1, l2) = norms(&self.noise);
        l1 == self.noise_l1 && l2 == self.noise_l2
    }
}

fn norms(v: &[f64]) -> (f64, f64) {
    let l1 = v.iter().map(|x| x.abs()).sum();
    let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (l1, l2)
}

pub fn output_perturb(w: &ModelWeights, spec: &NoiseSpec) -> Result<PerturbedModel> {
    if w.classes() != spec.classes || w.dim() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: w.classes() * w.dim(),
            actual: spec.classes * spec.dim,
            context: "noise spec vs model shape",
        });
    }
    let noise = laplace_vector(spec)?;
    let mut weights = w.clone();
    for (wi, ni) in weights.as_mut_slice().iter_mut().zip(&noise) {
        *wi += ni;
    }
    weights.meta.noise_scale = Some(spec.scale);
    let (noise_l1, noise_l2) = norms(&noise);
    Ok(PerturbedModel {
        weights,
        noise,
        noise_l1,
        noise_l2,
        spec: *spec,
    })
}

/// Private SGD: train, then add Laplace noise of scale `delta`.
pub fn psgd(
    data: DataView<'_>,
    delta: f64,
    reg: &RegularizerSpec<'_>,
    cfg: &TrainConfig,
    noise_seed: u64,
) -> Result<PerturbedModel> {
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    let w = erm::sgd_train(data, reg, cfg)?;
    output_perturb(
        &w,
        &NoiseSpec {
            scale: delta,
            classes: w.classes(),
            dim: w.dim(),
            seed: noise_seed,
        },
    )
}

/// Private biased regularized ERM with noise `4L/(λ·size_for_noise·ε)`.
#[allow(clippy::too_many_arguments)]
pub fn pberm(
    bias: &ModelWeights,
    data: DataView<'_>,
    lambda: f64,
    eps: f64,
    lipschitz: f64,
    cfg: &TrainConfig,
    size_for_noise: usize,
    noise_seed: u64,
) -> Result<PerturbedModel> {
    let scale = noise_scale(
        NoiseKind::Pberm {
            batch: size_for_noise,
        },
        &NoiseParams {
            lipschitz,
            lambda,
            eps,
        },
    )?;
    pberm_scaled(bias, data, lambda, cfg, scale, noise_seed)
}

/// Biased ERM followed by noise at an explicit scale.
pub fn pberm_scaled(
    bias: &ModelWeights,
    data: DataView<'_>,
    lambda: f64,
    cfg: &TrainConfig,
    scale: f64,
    noise_seed: u64,
) -> Result<PerturbedModel> {
    let w = erm::biased_erm_minimize(data, bias, lambda, cfg)?;
    output_perturb(
        &w,
        &NoiseSpec {
            scale,
            classes: w.classes(),
            dim: w.dim(),
            seed: noise_seed,
        },
    )
}

/// How a subsampling probability is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SamplingRule {
    /// `(e^{ε/(2·2^k)} − 1) / (e^{ε/2} − 1)`.
    ExpFormula { level: u32 },
    /// `1/2^j`.
    Reciprocal { level: u32 },
}

impl SamplingRule {
    pub fn probability(&self, eps: f64) -> Result<f64> {
        let p = match *self {
            SamplingRule::ExpFormula { level } => {
                if !(eps > 0.0) {
                    return Err(Error::invalid("epsilon", "must be positive"));
                }
                (eps / (2.0 * 2f64.powi(level as i32))).exp_m1() / (eps / 2.0).exp_m1()
            }
            SamplingRule::Reciprocal { level } => 0.5f64.powi(level as i32),
        };
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid("sampling probability", format!("{p} outside (0, 1]")));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingSpec {
    pub rule: SamplingRule,
    pub seed: u64,
}

/// Bernoulli(p) inclusion of each index in `0..n`, order preserved.
pub fn subsample_indices(n: usize, p: f64, seed: u64) -> Vec<usize> {
    if p >= 1.0 {
        return (0..n).collect();
    }
    let mut g = rng::generator(seed);
    (0..n).filter(|_| g.random::<f64>() < p).collect()
}

/// Returns the sample and the inclusion probability used.
pub fn subsample(data: DataView<'_>, spec: &SamplingSpec, eps: f64) -> Result<(Dataset, f64)> {
    let p = spec.rule.probability(eps)?;
    let idx = subsample_indices(data.len(), p, spec.seed);
    Ok((Dataset::select(data, &idx), p))
}
