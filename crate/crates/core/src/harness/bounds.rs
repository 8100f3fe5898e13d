//! Right-hand sides of the excess-risk bounds, evaluated as written. These are
//! reported next to measured accuracy and never used as pass/fail checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    MultiresRisk,
    ContinualRisk,
    OldDataRisk,
    SlidingRisk,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub l: Option<f64>,
    pub lambda: Option<f64>,
    pub eps: Option<f64>,
    pub d: Option<f64>,
    /// `B`, `b₀` or `w₀` depending on the bound.
    pub unit: Option<f64>,
    /// `k` or `j`.
    pub level: Option<u32>,
    pub eta: Option<f64>,
    pub m: Option<f64>,
    pub g: Option<f64>,
    pub beta: Option<f64>,
    pub r: Option<f64>,
    pub r_g: Option<f64>,
    /// `‖w* − w_g‖`.
    pub w_gap: Option<f64>,
}

fn need(v: Option<f64>, name: &'static str) -> Result<f64> {
    v.ok_or(Error::MissingTheoryParam(name))
}

pub fn utility_bound(kind: BoundKind, p: &TheoryParams) -> Result<f64> {
    let l = need(p.l, "L")?;
    let lambda = need(p.lambda, "λ")?;
    let eps = need(p.eps, "ε")?;
    let d = need(p.d, "d")?;
    match kind {
        BoundKind::MultiresRisk => {
            let b = need(p.unit, "B")?;
            let k = p.level.ok_or(Error::MissingTheoryParam("k"))?;
            let (beta, r, g) = (need(p.beta, "β")?, need(p.r, "R")?, need(p.g, "G")?);
            let n = 2f64.powi(k as i32) * b;
            Ok(((l + beta * r * r) + g * g) * n.ln() / (lambda * n) + 4.0 * d * g * g / (eps * lambda * b))
        }
        BoundKind::ContinualRisk | BoundKind::SlidingRisk => {
            let (unit_name, factor, level) = if kind == BoundKind::ContinualRisk {
                ("b₀", 4.0, p.level.ok_or(Error::MissingTheoryParam("j"))?)
            } else {
                ("w₀", 12.0, 0)
            };
            let unit = need(p.unit, unit_name)?;
            let (eta, m, r_g) = (need(p.eta, "η")?, need(p.m, "M")?, need(p.r_g, "R_g")?);
            let n = 2f64.powi(level as i32) * unit;
            Ok((2.0 * eta * r_g / n).sqrt()
                + (1.5 * m * eta + 1.0) / n
                + (d.ln() + eta) * factor * d * l * l / (lambda * unit * eps))
        }
        BoundKind::OldDataRisk => {
            let eta = need(p.eta, "η")?;
            let gap = need(p.w_gap, "‖w*−w_g‖")?;
            Ok(l * gap * ((2.0 * ((d.ln() + eta) * 2.0 * d * l * l / (lambda * eps) + 1.0)).sqrt() + 1.0))
        }
    }
}
