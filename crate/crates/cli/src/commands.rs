use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use dpstream_core::erm::{lipschitz_constant, Dataset, LipschitzMode};
use dpstream_core::harness::{
    load_csv, load_idx, replay, summarize, synth_holdout, write_metrics, ReplayRun, SourceKind,
};
use dpstream_core::ledger::{parse_eps, BudgetReport, Eps, Filter, Ledger};
use dpstream_core::schedule::{ledger_from_trace, plan, read_trace, write_trace};

use crate::config::{parse_run, resolve_schedule, schedule_layers, RunArgs, RunConfig, ScheduleArgs, TestSpec};
use crate::exit::{CliError, CliResult, BUDGET};

fn fraction(e: &Eps) -> String {
    format!("{}/{}", e.numer(), e.denom())
}

fn print_report(report: &BudgetReport) {
    for e in &report.entries {
        let budget = e.budget.as_ref().map_or("-".to_string(), fraction);
        let witness = e.witness.map_or("-".to_string(), |w| w.to_string());
        println!(
            "{} {} max {} budget {} witness {}",
            if e.pass { "ok" } else { "VIOLATION" },
            e.scope,
            fraction(&e.max),
            budget,
            witness
        );
    }
}

fn load_data(cfg: &RunConfig) -> CliResult<(Dataset, Dataset)> {
    let mut stream = cfg.source.load()?;
    let test = match &cfg.test {
        TestSpec::Idx { images, labels } => load_idx(images, labels)?,
        TestSpec::Csv(path) => load_csv(path)?,
        TestSpec::SynthHoldout(size) => match &cfg.source.kind {
            SourceKind::Synthetic(s) => synth_holdout(s, *size)?,
            _ => unreachable!("synthetic holdout for a file source"),
        },
        TestSpec::HoldOutTail => {
            let keep = stream.len() - stream.len() / 4;
            let tail = stream.range(keep, stream.len().saturating_sub(1))?.to_dataset();
            stream = stream.take(keep);
            tail
        }
    };
    if let Some(n) = cfg.limit {
        stream = stream.take(n);
    }
    let classes = stream.classes().max(test.classes());
    Ok((stream.with_classes(classes)?, test.with_classes(classes)?))
}

fn preamble(cfg: &RunConfig, run: &ReplayRun) -> Vec<String> {
    let mut lines = vec!["dpstream run".to_string()];
    lines.extend(cfg.echo.iter().map(|(k, v)| format!("{k}={v}")));
    lines.push(format!("seed={}", run.seed));
    lines.push(format!("lipschitz={}", run.lipschitz));
    lines
}

fn write_summary(runs: &[ReplayRun], path: &Path) -> CliResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "t,kind,seeds,acc_test_p25,acc_test_median,acc_test_p75,acc_recent_p25,acc_recent_median,acc_recent_p75,noise_l2_median"
    )?;
    for row in summarize(runs) {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.t,
            row.kind,
            row.seeds,
            row.acc_test.p25,
            row.acc_test.median,
            row.acc_test.p75,
            row.acc_recent.p25,
            row.acc_recent.median,
            row.acc_recent.p75,
            row.noise_l2.median
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Test hook: charge the full budget again over the first charged interval.
fn inject_violation(ledger: &mut Ledger) -> CliResult<()> {
    if let Some(c) = ledger.charges().first().cloned() {
        let budget = ledger.budget(c.subsystem).unwrap_or(c.eps);
        ledger.charge((c.a, c.b), budget, c.subsystem, c.time, "injected")?;
    }
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> CliResult<u8> {
    let cfg = parse_run(args)?;
    let (stream, test) = load_data(&cfg)?;
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::data(e).context(format!("creating {}", cfg.out.display())))?;
    let mut runs = Vec::new();
    let mut violated = false;
    for &seed in &cfg.seeds {
        let mut run = replay(&stream, &test, &cfg.replay, seed)?;
        let ext = cfg.format.extension();
        write_metrics(
            &run.records,
            File::create(cfg.out.join(format!("metrics-seed{seed}.{ext}")))?,
            cfg.format,
            &preamble(&cfg, &run),
        )?;
        write_trace(&run.output.events, BufWriter::new(File::create(cfg.out.join(format!("trace-seed{seed}.jsonl")))?))?;
        if cfg.inject_budget_violation {
            inject_violation(&mut run.output.ledger)?;
        }
        run.output
            .ledger
            .write_jsonl(BufWriter::new(File::create(cfg.out.join(format!("ledger-seed{seed}.jsonl")))?))?;
        let final_acc = run.final_acc_test().map_or("-".to_string(), |a| format!("{a:.4}"));
        println!("seed {seed}: {} releases, final acc_test {final_acc}", run.records.len());
        if run.output.ledger_enabled {
            let report = run.output.ledger.assert_budget();
            print_report(&report);
            violated |= !report.pass();
        } else {
            println!("ledger disabled (non-private run)");
        }
        runs.push(run);
    }
    write_summary(&runs, &cfg.out.join("summary.csv"))?;
    Ok(if violated { BUDGET } else { 0 })
}

#[derive(Args, Debug, Clone)]
pub struct InspectArgs {
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Number of stream points to plan for.
    #[arg(long, env = "DPSTREAM_HORIZON")]
    pub horizon: usize,
    /// Class count used for the public Lipschitz bound.
    #[arg(long, env = "DPSTREAM_CLASSES", default_value_t = 2)]
    pub classes: usize,
    /// Write the trace here instead of stdout.
    #[arg(long, env = "DPSTREAM_TRACE_OUT")]
    pub out: Option<PathBuf>,
}

/// Dry run: plans the schedule without data or randomness.
pub fn cmd_inspect_schedule(args: &InspectArgs) -> CliResult<u8> {
    let mut layers = schedule_layers(&args.schedule)?;
    let cfg = resolve_schedule(&args.schedule, &mut layers)?;
    let lipschitz = match cfg.lipschitz {
        Some(l) => l,
        None => lipschitz_constant(LipschitzMode::PublicBound {
            classes: args.classes,
            samples: cfg.unit()?,
            feature_cap: 1.0,
        })?,
    };
    let mut scheduler = dpstream_core::harness::build_scheduler(&cfg, lipschitz)?;
    let (events, ledger) = plan(scheduler.as_mut(), args.horizon)?;
    match &args.out {
        Some(path) => write_trace(&events, BufWriter::new(File::create(path)?))?,
        None => write_trace(&events, io::stdout().lock())?,
    }
    let report = ledger.assert_budget();
    for e in &report.entries {
        eprintln!(
            "{} {} max {} witness {}",
            if e.pass { "ok" } else { "VIOLATION" },
            e.scope,
            fraction(&e.max),
            e.witness.map_or("-".to_string(), |w| w.to_string())
        );
    }
    Ok(if report.pass() { 0 } else { BUDGET })
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    /// JSON-lines event trace.
    pub trace: PathBuf,
    /// Budget for each subsystem.
    #[arg(long, env = "DPSTREAM_EPSILON")]
    pub epsilon: String,
}

pub fn cmd_verify_ledger(args: &VerifyArgs) -> CliResult<u8> {
    let eps = parse_eps(&args.epsilon)?;
    let file = File::open(&args.trace).map_err(|e| CliError::data(e).context(format!("opening {}", args.trace.display())))?;
    let records = read_trace(BufReader::new(file))?;
    let ledger = ledger_from_trace(&records, eps)?;
    let (witness, max) = ledger.max_point_loss(Filter::All);
    println!(
        "max point loss {} witness {}",
        fraction(&max),
        witness.map_or("-".to_string(), |w| w.to_string())
    );
    let report = ledger.assert_budget();
    print_report(&report);
    Ok(if report.pass() { 0 } else { BUDGET })
}
