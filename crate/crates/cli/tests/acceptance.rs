//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any criterion fails, except for those listed in
//! `KNOWN_DEVIATIONS` whose stated value is arithmetically unattainable.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use dpstream_core::erm::{loss_and_gradient, objective, Dataset, ModelWeights, RegularizerSpec};
use dpstream_core::harness::{load_idx, replay, synth_holdout, synth_stream, Quantiles, ReplayConfig, SchedulerKind, SynthConfig};
use dpstream_core::ledger::{Eps, Filter, Ledger, Subsystem};
use dpstream_core::mechanisms::{laplace_vector, subsample_indices, NoiseSpec, SamplingRule};
use dpstream_core::schedule::{
    plan, read_trace, BaselineKind, BaselineScheduler, ContinualConfig, ContinualScheduler, EventKind,
    MultiResScheduler, PrivacyParams, ReleaseEvent, Scheduler, SlidingConfig, SlidingScheduler,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criterion 3 names 127/128 as the maximum at B = 8, T = 1024, but that horizon
/// completes levels 0 through 7 and the exact maximum is 255/256.
const KNOWN_DEVIATIONS: &[u32] = &[3];

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Verdict {
    status: Status,
    detail: String,
}

impl Verdict {
    fn check(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            status: if pass { Status::Pass } else { Status::Fail },
            detail: detail.into(),
        }
    }

    fn skip(detail: impl Into<String>) -> Self {
        Self {
            status: Status::Skip,
            detail: detail.into(),
        }
    }
}

fn eps(n: i128, d: i128) -> Eps {
    Eps::new(n, d)
}

fn params(e: Eps) -> PrivacyParams {
    PrivacyParams::new(e, 1.0, 1.0).unwrap()
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dpstream")
}

fn frac(e: &Eps) -> String {
    format!("{}/{}", e.numer(), e.denom())
}

// ---------------------------------------------------------------- 1

fn chain(s: &SlidingScheduler) -> Vec<(usize, usize)> {
    let st = s.state().unwrap();
    st.chain().iter().rev().map(|b| b.interval(st.w0())).collect()
}

fn criterion_1() -> Verdict {
    let mut s = SlidingScheduler::new(SlidingConfig {
        w: 7,
        w0: 1,
        params: params(eps(1, 1)),
        sampled: false,
    })
    .unwrap();
    // (t, chain newest-first as f_a ← f_b ← f_c, trained intervals)
    let expected: [(usize, Vec<(usize, usize)>, Vec<(usize, usize)>); 5] = [
        (7, vec![(0, 0), (1, 2), (3, 6)], vec![(0, 0), (1, 2), (3, 6)]),
        (8, vec![(7, 7), (1, 2), (3, 6)], vec![(7, 7)]),
        (9, vec![(2, 2), (7, 8), (3, 6)], vec![(2, 2), (7, 8)]),
        (10, vec![(9, 9), (7, 8), (3, 6)], vec![(9, 9)]),
        (11, vec![(4, 4), (5, 6), (7, 10)], vec![(4, 4), (5, 6), (7, 10)]),
    ];
    let mut got = Vec::new();
    let mut ok = true;
    let mut t_exp = expected.iter().peekable();
    for t in 1..=11 {
        let evs = s.step(t).unwrap();
        if let Some((te, ch, trained)) = t_exp.peek() {
            if *te == t {
                let mut tr: Vec<_> = evs.iter().map(|e| e.interval).collect();
                tr.sort();
                ok &= chain(&s) == *ch && tr == *trained;
                got.push(chain(&s));
                t_exp.next();
                continue;
            }
        }
        ok &= evs.is_empty();
    }
    // the dry-run CLI trace must show the same trained sets
    let out = Command::new(bin())
        .args(["inspect-schedule", "--scheduler", "sliding", "--w", "7", "--w0", "1"])
        .args(["--epsilon", "1", "--lambda", "1", "--horizon", "11"])
        .output()
        .unwrap();
    let recs = read_trace(out.stdout.as_slice()).unwrap();
    let mut by_t: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for r in &recs {
        by_t.entry(r.t).or_default().push((r.a, r.b));
    }
    for v in by_t.values_mut() {
        v.sort();
    }
    let cli: Vec<_> = expected.iter().map(|(t, _, tr)| (*t, tr.clone())).collect();
    ok &= out.status.success() && by_t.into_iter().collect::<Vec<_>>() == cli;
    Verdict::check(ok, format!("five chain states {got:?}"))
}

// ---------------------------------------------------------------- 2

/// Comparable view of an event: the regularizer is identified by the
/// interval of the model it names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Ev {
    t: usize,
    kind: &'static str,
    level: Option<u32>,
    interval: (usize, usize),
    eps: Eps,
    subsystem: Subsystem,
    reg: Option<(usize, usize)>,
    released: bool,
}

fn observe(s: &mut dyn Scheduler, horizon: usize) -> Vec<Ev> {
    let mut intervals = HashMap::new();
    let mut out = Vec::new();
    for t in 1..=horizon {
        for e in s.step(t).unwrap() {
            intervals.insert(e.model_id, e.interval);
            out.push(view(&e, &intervals));
        }
    }
    out.sort();
    out
}

fn view(e: &ReleaseEvent, intervals: &HashMap<u64, (usize, usize)>) -> Ev {
    Ev {
        t: e.t,
        kind: e.kind.name(),
        level: e.level,
        interval: e.interval,
        eps: e.eps,
        subsystem: e.subsystem,
        reg: e.reg_source.map(|id| intervals[&id]),
        released: e.released,
    }
}

fn oracle_multires(block: usize, horizon: usize, e: Eps) -> Vec<Ev> {
    // enumerate every aligned block of every size
    let mut out = Vec::new();
    let mut k = 0u32;
    while (block << k) <= horizon {
        let size = block << k;
        for j in 1..=horizon / size {
            out.push(Ev {
                t: j * size,
                kind: "multires",
                level: Some(k),
                interval: ((j - 1) * size, j * size - 1),
                eps: e / (2 * (1i128 << k)),
                subsystem: Subsystem::Multires,
                reg: None,
                released: true,
            });
        }
        k += 1;
    }
    out.sort();
    out
}

fn log2_exact(x: usize) -> Option<u32> {
    (0..usize::BITS).find(|&j| 1usize << j == x)
}

fn oracle_continual(block: usize, batch: usize, horizon: usize, e: Eps) -> Vec<Ev> {
    let mut out = Vec::new();
    let mut tg = 0usize;
    let mut base: Option<(usize, usize)> = None;
    let mut checkpoint: Option<(usize, usize)> = None;
    for t in 1..=horizon {
        if t % block == 0 {
            if let Some(k) = log2_exact(t / block) {
                for (kind, ee, sub, released) in [
                    ("multires", e / (2 * (1i128 << k)), Subsystem::Multires, false),
                    ("base", Eps::from_integer(0), Subsystem::Continual, true),
                ] {
                    out.push(Ev {
                        t,
                        kind,
                        level: Some(k),
                        interval: (0, t - 1),
                        eps: ee,
                        subsystem: sub,
                        reg: None,
                        released,
                    });
                }
                tg = t;
                base = Some((0, t - 1));
                checkpoint = base;
                continue;
            }
        }
        if t < block || t <= tg || (t - tg) % batch != 0 {
            continue;
        }
        let i = (t - tg) / batch;
        match log2_exact(i) {
            Some(j) if j >= 1 => {
                out.push(Ev {
                    t,
                    kind: "large_update",
                    level: Some(j),
                    interval: (tg, t - 1),
                    eps: e / (2 * (1i128 << j)),
                    subsystem: Subsystem::Continual,
                    reg: base,
                    released: true,
                });
                checkpoint = Some((tg, t - 1));
            }
            _ => out.push(Ev {
                t,
                kind: "small_update",
                level: None,
                interval: (t - batch, t - 1),
                eps: e / 2,
                subsystem: Subsystem::Continual,
                reg: checkpoint,
                released: true,
            }),
        }
    }
    out.sort();
    out
}

/// Window layout at an update time, oldest first, as `(start, blocks, is_base)`.
fn sliding_layout(t: usize, w: usize, w0: usize, k: u32) -> Vec<(usize, usize, bool)> {
    let half = 1usize << (k - 1);
    let r = ((t - w) / w0) % half;
    let epoch = t - r * w0;
    let left_blocks = half - 1 - r;
    let mut out = Vec::new();
    let mut at = t - w;
    for i in 0..k - 1 {
        if left_blocks >> i & 1 == 1 {
            out.push((at, 1 << i, false));
            at += (1 << i) * w0;
        }
    }
    assert_eq!(at, epoch - half * w0);
    out.push((at, half, true));
    at = epoch;
    for i in (0..k - 1).rev() {
        if r >> i & 1 == 1 {
            out.push((at, 1 << i, false));
            at += (1 << i) * w0;
        }
    }
    assert_eq!(at, t);
    out
}

fn oracle_sliding(w: usize, w0: usize, horizon: usize, e: Eps) -> Vec<Ev> {
    let k = log2_exact(w / w0 + 1).unwrap();
    let half = 1usize << (k - 1);
    let mut out = Vec::new();
    let mut prev: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut t = w;
    while t <= horizon {
        let layout = sliding_layout(t, w, w0, k);
        let r = ((t - w) / w0) % half;
        let iv = |&(s, b, _): &(usize, usize, bool)| (s, s + b * w0 - 1);
        let by_size: HashMap<usize, (usize, usize)> = layout.iter().map(|x| (x.1, iv(x))).collect();
        let kind = match (t == w, r == 0) {
            (true, _) => "window_init",
            (false, true) => "window_refresh",
            _ => "window_advance",
        };
        for x in &layout {
            if r != 0 && prev.contains(&iv(x)) {
                continue;
            }
            out.push(Ev {
                t,
                kind,
                level: Some(x.1.trailing_zeros()),
                interval: iv(x),
                eps: if x.2 { e / 3 } else { e / (6 * x.1 as i128) },
                subsystem: Subsystem::Sliding,
                reg: if x.2 { None } else { Some(by_size[&(2 * x.1)]) },
                released: x.1 == 1,
            });
        }
        prev = layout.iter().map(iv).collect();
        t += w0;
    }
    out.sort();
    out
}

fn oracle_baseline(kind: BaselineKind, block: usize, batch: usize, horizon: usize, e: Eps) -> Vec<Ev> {
    let mut out = Vec::new();
    let mut last = None;
    for t in (batch..=horizon).step_by(batch) {
        let ev = match kind {
            BaselineKind::Independent => Ev {
                t,
                kind: "baseline_independent",
                level: None,
                interval: (t - batch, t - 1),
                eps: e / 2,
                subsystem: Subsystem::Baseline,
                reg: None,
                released: true,
            },
            BaselineKind::BasicCumulative => {
                if t < block {
                    continue;
                }
                match (t % block == 0).then(|| log2_exact(t / block)).flatten() {
                    Some(k) => Ev {
                        t,
                        kind: "baseline_basic_cumulative",
                        level: Some(k),
                        interval: (0, t - 1),
                        eps: e / (2 * (1i128 << k)),
                        subsystem: Subsystem::Multires,
                        reg: None,
                        released: true,
                    },
                    None => Ev {
                        t,
                        kind: "baseline_basic_cumulative",
                        level: None,
                        interval: (t - batch, t - 1),
                        eps: e / 2,
                        subsystem: Subsystem::Baseline,
                        reg: last,
                        released: true,
                    },
                }
            }
        };
        last = Some(ev.interval);
        out.push(ev);
    }
    out.sort();
    out
}

fn criterion_2() -> Verdict {
    let horizon = 4096;
    let e = eps(1, 1);
    let p = params(e);
    let mut checked = 0;
    let mut bad = Vec::new();
    let mut cmp = |name: String, got: Vec<Ev>, want: Vec<Ev>| {
        checked += 1;
        if got != want || got.is_empty() {
            bad.push(name);
        }
    };
    for block in [1, 2, 8] {
        let mut s = MultiResScheduler::new(block, p, false).unwrap();
        cmp(format!("multires B={block}"), observe(&mut s, horizon), oracle_multires(block, horizon, e));
        for batch in [1, 2] {
            if batch > block {
                continue;
            }
            let mut s = ContinualScheduler::new(ContinualConfig::new(block, batch, p)).unwrap();
            cmp(
                format!("continual B={block} b0={batch}"),
                observe(&mut s, horizon),
                oracle_continual(block, batch, horizon, e),
            );
            for kind in [BaselineKind::Independent, BaselineKind::BasicCumulative] {
                let mut s = BaselineScheduler::new(kind, block, batch, p).unwrap();
                cmp(
                    format!("{kind:?} B={block} b0={batch}"),
                    observe(&mut s, horizon),
                    oracle_baseline(kind, block, batch, horizon, e),
                );
            }
        }
    }
    for w in [7, 15, 31] {
        for w0 in [1, 2] {
            let mut s = SlidingScheduler::new(SlidingConfig {
                w: w * w0,
                w0,
                params: p,
                sampled: false,
            })
            .unwrap();
            cmp(
                format!("sliding w={} w0={w0}", w * w0),
                observe(&mut s, horizon),
                oracle_sliding(w * w0, w0, horizon, e),
            );
        }
    }
    Verdict::check(
        bad.is_empty(),
        format!("{checked} configurations to T={horizon}, mismatches {bad:?}"),
    )
}

// ---------------------------------------------------------------- 3

fn max_of(ledger: &Ledger, filter: Filter<'_>) -> Eps {
    ledger.max_point_loss(filter).1
}

/// Exponents `m` of the continual charges covering each point, which the
/// geometric argument needs to be distinct with `m ≥ 1`.
fn distinct_halvings(ledger: &Ledger, horizon: usize, e: Eps) -> (bool, Vec<Eps>) {
    let mut longest = Vec::new();
    for i in 0..horizon {
        let mut seen = BTreeSet::new();
        let mut terms = Vec::new();
        for c in ledger.charges_at(i).filter(|c| c.subsystem == Subsystem::Continual) {
            let ratio = e / c.eps;
            if !ratio.is_integer() {
                return (false, terms);
            }
            let m = match log2_exact(*ratio.numer() as usize) {
                Some(m) if m >= 1 => m,
                _ => return (false, terms),
            };
            if !seen.insert(m) {
                return (false, terms);
            }
            terms.push(c.eps);
        }
        if terms.len() > longest.len() {
            longest = terms;
        }
    }
    (true, longest)
}

fn budget_checks(sampled: bool) -> (bool, String) {
    let e = eps(1, 1);
    let p = params(e);
    let mut notes = Vec::new();
    let mut ok = true;

    for (horizon, want) in [(512, eps(127, 128)), (1024, eps(255, 256))] {
        let (_, ledger) = plan(&mut MultiResScheduler::new(8, p, sampled).unwrap(), horizon).unwrap();
        let got = max_of(&ledger, Filter::All);
        // Σ_{k ≤ K} ε/2^(k+1) with K the top complete level
        let top = log2_exact(horizon / 8).unwrap() as i32;
        let oracle: Eps = (0..=top).map(|k| e / (2 * (1i128 << k))).sum();
        ok &= got == oracle && got == want;
        notes.push(format!("multires T={horizon} {}", frac(&got)));
    }

    let horizon = 4096;
    let mut cfg = ContinualConfig::new(64, 8, p);
    cfg.sampled = sampled;
    let (_, ledger) = plan(&mut ContinualScheduler::new(cfg).unwrap(), horizon).unwrap();
    let cont = max_of(&ledger, Filter::Only(&[Subsystem::Continual]));
    let (pattern, longest) = distinct_halvings(&ledger, horizon, e);
    let prefix: Eps = longest.iter().sum();
    let geometric = longest
        .iter()
        .enumerate()
        .all(|(j, c)| *c == e / (1i128 << (j + 1)));
    let combined = max_of(&ledger, Filter::All);
    ok &= cont <= e && pattern && geometric && prefix == cont && combined <= e * 2 && ledger.assert_budget().pass();
    notes.push(format!(
        "continual {} as {} terms ε/2+ε/4+…, combined {}",
        frac(&cont),
        longest.len(),
        frac(&combined)
    ));

    let (w, w0) = (30, 2);
    let horizon = w + 12 * 8 * w0 + 5;
    let mut s = SlidingScheduler::new(SlidingConfig {
        w,
        w0,
        params: p,
        sampled,
    })
    .unwrap();
    let (events, ledger) = plan(&mut s, horizon).unwrap();
    let refreshes = events
        .iter()
        .filter(|e| e.kind == EventKind::WindowRefresh)
        .map(|e| e.t)
        .collect::<BTreeSet<_>>()
        .len();
    let groups: Vec<Eps> = ["sliding-base", "sliding-left", "sliding-right"]
        .iter()
        .map(|m| max_of(&ledger, Filter::Mechanism(m)))
        .collect();
    let total = max_of(&ledger, Filter::All);
    ok &= refreshes >= 10 && groups.iter().all(|g| *g <= e / 3) && total <= e;
    notes.push(format!(
        "sliding {refreshes} refreshes, base/left/right {}/{}/{} total {}",
        frac(&groups[0]),
        frac(&groups[1]),
        frac(&groups[2]),
        frac(&total)
    ));
    (ok, notes.join("; "))
}

fn criterion_3() -> Verdict {
    let (ok, notes) = budget_checks(false);
    let e = eps(1, 1);
    let (_, ledger) = plan(&mut MultiResScheduler::new(8, params(e), false).unwrap(), 1024).unwrap();
    let literal = max_of(&ledger, Filter::All) == eps(127, 128);
    Verdict::check(
        ok && literal,
        format!(
            "stated 127/128 at B=8 T=1024 is {}: eight levels 0..7 complete by T=1024, so the exact maximum is 255/256 \
             (127/128 is attained at T=512); remaining checks {}: {notes}",
            if literal { "met" } else { "not met" },
            if ok { "pass" } else { "FAIL" }
        ),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Verdict {
    let b = 0.8;
    let xs = laplace_vector(&NoiseSpec {
        scale: b,
        classes: 1,
        dim: 1_000_000,
        seed: 77,
    })
    .unwrap();
    let n = xs.len() as f64;
    let mad = xs.iter().map(|x| x.abs()).sum::<f64>() / n;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mad_err = (mad - b).abs() / b;
    let var_err = (var - 2.0 * b * b).abs() / (2.0 * b * b);
    let mut ok = mad_err <= 0.01 && var_err <= 0.02;
    let mut worst = 0.0f64;
    for d in [2usize, 8, 32] {
        for beta in [0.01, 0.05] {
            let bound = (d as f64 / beta).ln() * d as f64 * b;
            let trials = 10_000;
            let v = (0..trials)
                .filter(|&s| {
                    let nu = laplace_vector(&NoiseSpec {
                        scale: b,
                        classes: 1,
                        dim: d,
                        seed: 5_000_000 + s as u64,
                    })
                    .unwrap();
                    nu.iter().map(|x| x.abs()).sum::<f64>() > bound
                })
                .count();
            let rate = v as f64 / trials as f64;
            ok &= rate <= beta;
            worst = worst.max(rate / beta);
        }
    }
    Verdict::check(
        ok,
        format!(
            "MAD error {:.3}%, variance error {:.3}%, worst tail violation rate / β = {worst:.3}",
            mad_err * 100.0,
            var_err * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Verdict {
    let mut g = ChaCha8Rng::seed_from_u64(99);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for case in 0..100 {
        let d = g.random_range(1..=8);
        let k = g.random_range(2..=4);
        let mut ds = Dataset::empty(d, k);
        for _ in 0..g.random_range(1..=10) {
            let x: Vec<f64> = (0..d).map(|_| g.random_range(-1.0..1.0)).collect();
            ds.push(&x, g.random_range(0..k)).unwrap();
        }
        let w: Vec<f64> = (0..k * d).map(|_| g.random_range(-1.5..1.5)).collect();
        let bias = ModelWeights::from_vec(k, d, (0..k * d).map(|_| g.random_range(-1.5..1.5)).collect()).unwrap();
        let lambda = g.random_range(0.05..1.0);
        let reg = if case % 2 == 0 {
            RegularizerSpec::toward(lambda, &bias)
        } else {
            RegularizerSpec::origin(lambda)
        };
        let at = |v: Vec<f64>| ModelWeights::from_vec(k, d, v).unwrap();
        let (_, grad) = loss_and_gradient(&at(w.clone()), ds.view(), &reg).unwrap();
        let mut num = 0.0;
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (objective(&at(p), ds.view(), &reg).unwrap() - objective(&at(m), ds.view(), &reg).unwrap()) / (2.0 * h);
            num += (grad[i] - fd).powi(2);
        }
        let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
        worst = worst.max(num.sqrt() / norm);
    }
    Verdict::check(worst <= 1e-5, format!("100 instances, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 6, 7

fn synth() -> (Dataset, Dataset) {
    let cfg = SynthConfig {
        d: 20,
        k: 3,
        n: 20_000,
        sigma: 0.5,
        drift_rate: 0.0,
        seed: 0,
    };
    (synth_stream(&cfg).unwrap(), synth_holdout(&cfg, 5000).unwrap())
}

fn continual_cfg(kind: SchedulerKind, e: Eps, private: bool) -> ReplayConfig {
    let mut cfg = ReplayConfig::new(kind, e, 1.0);
    cfg.batch = Some(512);
    cfg.block = Some(8 * 512);
    cfg.private = private;
    cfg
}

/// Median final test accuracy over seeds 1..=4, one thread per seed.
fn median_final(stream: &Dataset, test: &Dataset, cfg: &ReplayConfig) -> f64 {
    let accs: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = (1..=4u64)
            .map(|seed| s.spawn(move || replay(stream, test, cfg, seed).unwrap().final_acc_test().unwrap()))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    Quantiles::of(&accs).unwrap().median
}

fn criterion_6() -> Verdict {
    let (stream, test) = synth();
    let levels = [eps(1, 100), eps(1, 10), eps(1, 1)];
    let medians: Vec<f64> = levels
        .iter()
        .map(|&e| median_final(&stream, &test, &continual_cfg(SchedulerKind::Continual, e, true)))
        .collect();
    let plain = median_final(&stream, &test, &continual_cfg(SchedulerKind::Continual, eps(1, 1), false));
    let monotone = medians.windows(2).all(|w| w[0] <= w[1]);
    let close = (plain - medians[2]).abs() <= 0.03;
    Verdict::check(
        monotone && close,
        format!(
            "median final acc ε=0.01 {:.4}, ε=0.1 {:.4}, ε=1 {:.4}, non-private {plain:.4}",
            medians[0], medians[1], medians[2]
        ),
    )
}

fn criterion_7() -> Verdict {
    let (stream, test) = synth();
    let e = eps(1, 10);
    let cont = median_final(&stream, &test, &continual_cfg(SchedulerKind::Continual, e, true));
    let base = median_final(&stream, &test, &continual_cfg(SchedulerKind::BaselineIndependent, e, true));
    Verdict::check(
        cont >= base,
        format!("ε=0.1 median final acc continual {cont:.4} vs independent {base:.4}"),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Verdict {
    let Some(dir) = std::env::var_os("DPSTREAM_MNIST_DIR").map(PathBuf::from) else {
        return Verdict::skip("set DPSTREAM_MNIST_DIR to the directory holding the four MNIST IDX files");
    };
    let file = |n: &str| dir.join(n);
    let train = load_idx(&file("train-images-idx3-ubyte"), &file("train-labels-idx1-ubyte"))
        .unwrap()
        .shuffled(0)
        .take(20_000);
    let test = load_idx(&file("t10k-images-idx3-ubyte"), &file("t10k-labels-idx1-ubyte")).unwrap();
    let mnist = |e: Eps, private: bool| {
        let mut cfg = ReplayConfig::new(SchedulerKind::Continual, e, 1.0);
        cfg.batch = Some(1024);
        cfg.block = Some(8 * 1024);
        cfg.private = private;
        median_final(&train, &test, &cfg)
    };
    let plain = mnist(eps(1, 1), false);
    let a = mnist(eps(1, 10), true);
    let b = mnist(eps(1, 1), true);
    Verdict::check(
        (plain - a).abs() <= 0.03 && (plain - b).abs() <= 0.03,
        format!("final acc ε=0.1 {a:.4}, ε=1 {b:.4}, non-private {plain:.4}"),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Verdict {
    let mut ok = true;
    for e in [0.01, 0.1, 1.0, 4.0] {
        ok &= SamplingRule::ExpFormula { level: 0 }.probability(e).unwrap() == 1.0;
    }
    ok &= SamplingRule::Reciprocal { level: 0 }.probability(1.0).unwrap() == 1.0;
    ok &= subsample_indices(1000, 1.0, 3) == (0..1000).collect::<Vec<_>>();

    let block = 512;
    let p = SamplingRule::ExpFormula { level: 3 }.probability(0.1).unwrap();
    let mean = (0..200u64).map(|s| subsample_indices(8 * block, p, s).len()).sum::<usize>() as f64 / 200.0;
    let rel = (mean - block as f64).abs() / block as f64;
    ok &= rel <= 0.05;

    // every sampled schedule charges exactly what its unsampled twin charges
    let e = eps(1, 1);
    let pr = params(e);
    let twins: Vec<(Box<dyn Scheduler>, Box<dyn Scheduler>)> = vec![
        (
            Box::new(MultiResScheduler::new(8, pr, false).unwrap()),
            Box::new(MultiResScheduler::new(8, pr, true).unwrap()),
        ),
        (
            Box::new(ContinualScheduler::new(ContinualConfig::new(64, 8, pr)).unwrap()),
            Box::new(ContinualScheduler::new(ContinualConfig { sampled: true, ..ContinualConfig::new(64, 8, pr) }).unwrap()),
        ),
        (
            Box::new(SlidingScheduler::new(SlidingConfig { w: 30, w0: 2, params: pr, sampled: false }).unwrap()),
            Box::new(SlidingScheduler::new(SlidingConfig { w: 30, w0: 2, params: pr, sampled: true }).unwrap()),
        ),
    ];
    for (mut a, mut b) in twins {
        let (ea, la) = plan(a.as_mut(), 2048).unwrap();
        let (eb, lb) = plan(b.as_mut(), 2048).unwrap();
        ok &= la.assert_budget() == lb.assert_budget() && lb.assert_budget().pass();
        ok &= ea.iter().zip(&eb).all(|(x, y)| x.interval == y.interval && x.eps == y.eps);
        ok &= eb
            .iter()
            .filter(|e| e.level == Some(0) && e.sampled_p.is_some())
            .all(|e| e.sampled_p == Some(1.0));
    }
    let (budgets, notes) = budget_checks(true);
    ok &= budgets;
    Verdict::check(
        ok,
        format!("level-0 identity; mean level-3 sample {mean:.1} vs B={block} ({:.2}%); sampled budgets: {notes}", rel * 100.0),
    )
}

// ---------------------------------------------------------------- 10

fn run_cli(out: &Path) -> bool {
    Command::new(bin())
        .args(["run", "--scheduler", "continual", "--epsilon", "1", "--lambda", "1"])
        .args(["--B", "2048", "--b0", "512", "--synth-n", "6000", "--test-size", "1000"])
        .args(["--seeds", "1,2", "--out"])
        .arg(out)
        .output()
        .unwrap()
        .status
        .success()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn criterion_10() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let ok1 = run_cli(&out);
    let first = snapshot(&out);
    std::fs::remove_dir_all(&out).unwrap();
    let ok2 = run_cli(&out);
    let second = snapshot(&out);
    let names: Vec<_> = first.keys().cloned().collect();
    let expected = ["metrics-seed1.csv", "metrics-seed2.csv", "trace-seed1.jsonl", "trace-seed2.jsonl"];
    Verdict::check(
        ok1 && ok2 && first == second && expected.iter().all(|n| first.contains_key(*n)),
        format!("two runs, files {names:?} byte-identical: {}", first == second),
    )
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict, u64); 10] = [
        (1, "sliding walk-through", criterion_1, 1),
        (2, "schedule oracles", criterion_2, 30),
        (3, "privacy budgets", criterion_3, 10),
        (4, "noise statistics", criterion_4, 30),
        (5, "gradient check", criterion_5, 5),
        (6, "utility trend", criterion_6, 600),
        (7, "continual vs independent", criterion_7, 600),
        (8, "mnist", criterion_8, 1800),
        (9, "sampling variants", criterion_9, 60),
        (10, "determinism", criterion_10, 120),
    ];
    let mut failed = Vec::new();
    for (n, name, f, limit) in criteria {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::check(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let slow = elapsed > Duration::from_secs(limit);
        let label = match verdict.status {
            Status::Skip => "SKIP",
            Status::Pass if !slow => "PASS",
            _ => "FAIL",
        };
        if label == "FAIL" {
            failed.push(n);
        }
        let timing = if slow { format!("{elapsed:.1?} over the {limit} s limit") } else { format!("{elapsed:.1?}") };
        println!("criterion {n:>2} {label} {name} [{timing}]: {}", verdict.detail);
    }
    let unexpected: Vec<_> = failed.iter().filter(|n| !KNOWN_DEVIATIONS.contains(n)).collect();
    println!(
        "acceptance: {} failed {failed:?}, unexpected {unexpected:?}",
        failed.len()
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
