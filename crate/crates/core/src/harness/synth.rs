//! Gaussian class clusters whose means rotate over time.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::erm::Dataset;
use crate::error::{Error, Result};
use crate::rng::{child, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub sigma: f64,
    /// Radians per step by which every class mean rotates in coordinates 0, 1.
    pub drift_rate: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("k", "need at least two classes"));
        }
        if self.d < 2 {
            return Err(Error::invalid("d", "need at least two dimensions"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("sigma", "must be positive"));
        }
        if !(self.drift_rate >= 0.0) {
            return Err(Error::invalid("drift_rate", "must be nonnegative"));
        }
        Ok(())
    }

    /// Mean of class `c` at step `t`: a point on the unit circle.
    pub fn mean(&self, c: usize, t: f64) -> [f64; 2] {
        let angle = TAU * c as f64 / self.k as f64 + self.drift_rate * t;
        [angle.cos(), angle.sin()]
    }

    fn draw(&self, times: impl Iterator<Item = f64>, stream: u64) -> Result<Dataset> {
        self.validate()?;
        let mut g = child(self.seed, stream, Purpose::Data);
        let mut ds = Dataset::empty(self.d, self.k);
        let mut x = vec![0.0; self.d];
        for t in times {
            let c = g.random_range(0..self.k);
            let m = self.mean(c, t);
            for (j, xj) in x.iter_mut().enumerate() {
                let z: f64 = g.sample(StandardNormal);
                *xj = m.get(j).copied().unwrap_or(0.0) + self.sigma * z;
            }
            ds.push(&x, c)?;
        }
        Ok(ds)
    }
}

/// The stream: example `t` drawn at time `t` for `t` in `0..n`.
pub fn synth_stream(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.draw((0..cfg.n).map(|t| t as f64), 0)
}

/// Held-out examples from an independent draw, at times spread evenly over
/// the stream.
pub fn synth_holdout(cfg: &SynthConfig, size: usize) -> Result<Dataset> {
    let step = cfg.n as f64 / size.max(1) as f64;
    cfg.draw((0..size).map(|i| i as f64 * step), 1)
}
