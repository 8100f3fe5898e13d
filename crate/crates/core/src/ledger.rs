//! Exact per-datapoint privacy accounting.
//!
//! Every release charges an inclusive interval of stream indices. Totals are
//! kept as rationals so geometric sums such as `1/2 + 1/4 + … + 1/128` compare
//! exactly against the budget.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Eps = Ratio<i128>;

/// Converts a float ε to the simplest rational within float precision,
/// so `0.1` becomes `1/10`.
pub fn eps_from_f64(x: f64) -> Result<Eps> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::invalid("epsilon", format!("{x} must be positive")));
    }
    Ratio::<i128>::approximate_float(x)
        .filter(|r| r.to_f64().is_some_and(|v| (v - x).abs() <= x * 1e-12))
        .ok_or_else(|| Error::invalid("epsilon", format!("{x} has no exact rational form")))
}

/// Parses `"0.1"`, `"3/4"` or `"2"` exactly.
pub fn parse_eps(s: &str) -> Result<Eps> {
    let s = s.trim();
    let bad = || Error::invalid("epsilon", format!("cannot parse `{s}`"));
    let r = if let Some((n, d)) = s.split_once('/') {
        let n: i128 = n.trim().parse().map_err(|_| bad())?;
        let d: i128 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        Ratio::new(n, d)
    } else if let Some((int, frac)) = s.split_once('.') {
        let digits = frac.len() as u32;
        if digits > 30 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let den = 10i128.pow(digits);
        let int_part: i128 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac_part: i128 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        Ratio::new(int_part * den + frac_part, den)
    } else {
        Ratio::from_integer(s.parse().map_err(|_| bad())?)
    };
    Ok(r)
}

pub fn eps_to_f64(e: &Eps) -> f64 {
    e.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subsystem {
    Multires,
    Continual,
    Sliding,
    Baseline,
}

impl Subsystem {
    pub const ALL: [Subsystem; 4] = [
        Subsystem::Multires,
        Subsystem::Continual,
        Subsystem::Sliding,
        Subsystem::Baseline,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Subsystem::Multires => "multires",
            Subsystem::Continual => "continual",
            Subsystem::Sliding => "sliding",
            Subsystem::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Subsystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Charge {
    pub a: usize,
    pub b: usize,
    pub eps: Eps,
    pub subsystem: Subsystem,
    pub time: usize,
    pub mechanism: String,
}

/// Wire form of a [`Charge`], one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargeRecord {
    pub t: usize,
    pub a: usize,
    pub b: usize,
    pub eps_num: i128,
    pub eps_den: i128,
    pub subsystem: Subsystem,
    pub mechanism: String,
}

impl From<&Charge> for ChargeRecord {
    fn from(c: &Charge) -> Self {
        Self {
            t: c.time,
            a: c.a,
            b: c.b,
            eps_num: *c.eps.numer(),
            eps_den: *c.eps.denom(),
            subsystem: c.subsystem,
            mechanism: c.mechanism.clone(),
        }
    }
}

/// Append-only charge log with one budget per subsystem.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    charges: Vec<Charge>,
    budgets: BTreeMap<Subsystem, Eps>,
}

/// Which charges a query sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filter<'a> {
    All,
    Only(&'a [Subsystem]),
    Mechanism(&'a str),
}

impl Filter<'_> {
    fn admits(&self, c: &Charge) -> bool {
        match self {
            Filter::All => true,
            Filter::Only(s) => s.contains(&c.subsystem),
            Filter::Mechanism(m) => c.mechanism == *m,
        }
    }
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// A ledger whose every subsystem has budget `eps`.
    pub fn with_uniform_budget(eps: Eps) -> Self {
        let mut l = Self::new();
        for s in Subsystem::ALL {
            l.budgets.insert(s, eps);
        }
        l
    }

    pub fn set_budget(&mut self, subsystem: Subsystem, eps: Eps) {
        self.budgets.insert(subsystem, eps);
    }

    pub fn budget(&self, subsystem: Subsystem) -> Option<Eps> {
        self.budgets.get(&subsystem).copied()
    }

    pub fn charges(&self) -> &[Charge] {
        &self.charges
    }

    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }

    pub fn charge(
        &mut self,
        interval: (usize, usize),
        eps: Eps,
        subsystem: Subsystem,
        time: usize,
        mechanism: impl Into<String>,
    ) -> Result<()> {
        let (a, b) = interval;
        if a > b {
            return Err(Error::invalid("interval", format!("[{a}, {b}] is reversed")));
        }
        if eps <= Eps::zero() {
            return Err(Error::invalid("eps", format!("charge {eps} must be positive")));
        }
        self.charges.push(Charge {
            a,
            b,
            eps,
            subsystem,
            time,
            mechanism: mechanism.into(),
        });
        Ok(())
    }

    /// Total charge on stream index `i`.
    pub fn point_loss(&self, i: usize, filter: Filter<'_>) -> Eps {
        self.charges
            .iter()
            .filter(|c| filter.admits(c) && c.a <= i && i <= c.b)
            .fold(Eps::zero(), |acc, c| acc + c.eps)
    }

    /// Charges covering index `i`, in insertion order.
    pub fn charges_at(&self, i: usize) -> impl Iterator<Item = &Charge> {
        self.charges.iter().filter(move |c| c.a <= i && i <= c.b)
    }

    /// Maximum cumulative charge over all indices and the smallest index
    /// attaining it, by an interval sweep. `None` when nothing matches.
    pub fn max_point_loss(&self, filter: Filter<'_>) -> (Option<usize>, Eps) {
        let mut deltas: Vec<(usize, Eps)> = Vec::new();
        for c in self.charges.iter().filter(|c| filter.admits(c)) {
            deltas.push((c.a, c.eps));
            deltas.push((c.b + 1, -c.eps));
        }
        if deltas.is_empty() {
            return (None, Eps::zero());
        }
        deltas.sort_by_key(|d| d.0);
        let mut best = (None, Eps::zero());
        let mut running = Eps::zero();
        let mut i = 0;
        while i < deltas.len() {
            let pos = deltas[i].0;
            while i < deltas.len() && deltas[i].0 == pos {
                running += deltas[i].1;
                i += 1;
            }
            if running > best.1 {
                best = (Some(pos), running);
            }
        }
        best
    }

    pub fn subsystems(&self) -> Vec<Subsystem> {
        let mut s: Vec<Subsystem> = self.charges.iter().map(|c| c.subsystem).collect();
        s.sort();
        s.dedup();
        s
    }

    /// Checks each charged subsystem against its budget, plus the combined
    /// total against the sum of those budgets.
    pub fn assert_budget(&self) -> BudgetReport {
        let mut entries = Vec::new();
        let mut combined_budget = Eps::zero();
        let present = self.subsystems();
        for s in &present {
            let budget = self.budgets.get(s).copied();
            let (witness, max) = self.max_point_loss(Filter::Only(std::slice::from_ref(s)));
            if let Some(b) = budget {
                combined_budget += b;
            }
            entries.push(BudgetEntry {
                scope: s.name().to_string(),
                budget,
                max,
                witness,
                pass: budget.is_none_or(|b| max <= b),
            });
        }
        if present.len() > 1 {
            let (witness, max) = self.max_point_loss(Filter::All);
            entries.push(BudgetEntry {
                scope: "combined".to_string(),
                budget: Some(combined_budget),
                max,
                witness,
                pass: max <= combined_budget,
            });
        }
        BudgetReport { entries }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for c in &self.charges {
            serde_json::to_writer(&mut out, &ChargeRecord::from(c)).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Appends every record of a JSON-lines charge log; blank lines are skipped.
    pub fn read_jsonl<R: BufRead>(&mut self, input: R) -> Result<()> {
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ChargeRecord = serde_json::from_str(&line).map_err(|e| Error::Trace {
                line: n + 1,
                reason: e.to_string(),
            })?;
            self.charge_record(&rec).map_err(|e| Error::Trace {
                line: n + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn charge_record(&mut self, rec: &ChargeRecord) -> Result<()> {
        if rec.eps_den <= 0 {
            return Err(Error::invalid("eps_den", "must be positive"));
        }
        self.charge(
            (rec.a, rec.b),
            Ratio::new(rec.eps_num, rec.eps_den),
            rec.subsystem,
            rec.t,
            rec.mechanism.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetEntry {
    pub scope: String,
    pub budget: Option<Eps>,
    pub max: Eps,
    pub witness: Option<usize>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BudgetReport {
    pub entries: Vec<BudgetEntry>,
}

impl BudgetReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn entry(&self, scope: &str) -> Option<&BudgetEntry> {
        self.entries.iter().find(|e| e.scope == scope)
    }
}

impl fmt::Display for BudgetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            let budget = e.budget.map_or("-".to_string(), |b| b.to_string());
            let witness = e.witness.map_or("-".to_string(), |w| w.to_string());
            writeln!(
                f,
                "{} {}: max {} budget {} witness {}",
                if e.pass { "PASS" } else { "FAIL" },
                e.scope,
                e.max,
                budget,
                witness
            )?;
        }
        Ok(())
    }
}
