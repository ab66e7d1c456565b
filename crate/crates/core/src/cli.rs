//! Command-line surface: argument parsing, command dispatch and file output.
//! Every command validates its whole configuration before touching the file
//! system and writes a `manifest.toml` that `buyback rerun` replays.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::checkpoint::Checkpoint;
use crate::autodiff::ParamStore;
use crate::config::{ConfigFile, RunConfig, SweepParameter, SweepSection, DEFAULT_RESTARTS};
use crate::error::{Error, Result};
use crate::market::{simulate_paths, stylized_path, ExternalPaths, StylizedKind, STYLIZED_NOISE};
use crate::oracle::run_oracle_checks;
use crate::policy::{rollout_path, stop_uniforms, trace_rows, write_trace_csv, HedgedNaivePolicy, NetPolicy, Policy};
use crate::training::{
    evaluate, grad_check, train_from, CurvePoint, EvalMode, EvalReport, GradCheckReport, TrainAbort, TrainConfig,
    TrainObserver, TrainOutcome,
};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "BUYBACK_THREADS";

#[derive(Debug, Parser)]
#[command(name = "buyback", version, about = "Optimal execution and exercise of share buyback contracts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and write its learning curve, checkpoint and report.
    Train(TrainArgs),
    /// Score a checkpoint (or a reference policy) on fresh paths.
    Evaluate(EvaluateArgs),
    /// Trace a policy along one stylized or user-supplied price path.
    TrajectoryReport(TrajectoryArgs),
    /// Train one model per parameter value and tabulate the scores.
    Sweep(SweepArgs),
    /// Write simulated price paths as CSV.
    SimulatePaths(SimulateArgs),
    /// Compare reverse-mode gradients with finite differences.
    GradCheck(GradCheckArgs),
    /// Cross-check the brute-force oracles against the training code.
    OracleCheck(OracleCheckArgs),
    /// Re-run the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML).
    pub config: PathBuf,
    /// Overrides `training.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Independent restarts; the best final held-out objective wins.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyChoice {
    /// Networks loaded from `--checkpoint`.
    Net,
    /// Pro-rata schedule, settle at expiry.
    Naive,
    /// Pro-rata schedule, settle as soon as the contract is filled.
    HedgedNaive,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PolicyChoice::Net)]
    pub policy: PolicyChoice,
    #[arg(long, default_value = "relaxed")]
    pub mode: EvalMode,
    /// Evaluation paths; defaults to `training.heldout_size`.
    #[arg(long)]
    pub paths: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathKind {
    Up,
    Down,
    VShape,
    File,
}

#[derive(Debug, Clone, Args)]
pub struct TrajectoryArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PolicyChoice::Net)]
    pub policy: PolicyChoice,
    #[arg(long, value_enum)]
    pub kind: PathKind,
    /// `path_id,day,price` file for `--kind file`.
    #[arg(long)]
    pub path_file: Option<PathBuf>,
    /// Noise on stylized paths as a fraction of the daily volatility.
    #[arg(long, default_value_t = STYLIZED_NOISE)]
    pub noise: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Swept parameter; defaults to `sweep.parameter`.
    #[arg(long)]
    pub param: Option<SweepParameter>,
    /// Comma-separated values; default `sweep.values`.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    /// Restarts per value; default `sweep.restarts`, else 3.
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GradCheckArgs {
    /// Seeds `0..seeds` of the toy instance.
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long, default_value = "runs/grad-check")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OracleCheckArgs {
    /// Monte-Carlo paths per estimator comparison.
    #[arg(long, default_value_t = 1_000_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "runs/oracle-check")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    /// A `manifest.toml` written by an earlier run.
    pub manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

/// Applies `BUYBACK_THREADS` to the global pool. Results do not depend on
/// the thread count.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config(THREADS_ENV, "must be a positive integer"))?;
        // A second initialization (tests in one process) is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::TrajectoryReport(a) => cmd_trajectory_report(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::SimulatePaths(a) => cmd_simulate_paths(&a),
        Command::GradCheck(a) => cmd_grad_check(&a),
        Command::OracleCheck(a) => cmd_oracle_check(&a),
        Command::Rerun(a) => cmd_rerun(&a),
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut rc = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        rc.training.seed = seed;
    }
    Ok(rc)
}

fn out_dir(common: &Common, rc: &RunConfig, sub: Option<&str>) -> PathBuf {
    match &common.out {
        Some(d) => d.clone(),
        None => match sub {
            Some(s) => rc.output_dir.join(s),
            None => rc.output_dir.clone(),
        },
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn absolute(p: &Path) -> Result<String> {
    Ok(std::path::absolute(p)?.display().to_string())
}

/// Command arguments as stored in a manifest, ending with the absolute
/// output directory.
fn recorded(dir: &Path, mut args: Vec<String>) -> Result<Vec<String>> {
    args.extend(["--out".into(), absolute(dir)?]);
    Ok(args)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if curve.is_empty() {
        w.write_record(["epoch", "phase", "J", "J_normalized", "J_heldout"])?;
    }
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

fn load_params(checkpoint: &Path, rc: &RunConfig) -> Result<ParamStore> {
    let ck = Checkpoint::load(checkpoint)?;
    if ck.params.kind != rc.contract.kind() {
        return Err(Error::Mismatch(format!(
            "checkpoint {} holds a {} policy, the config describes a {} contract",
            checkpoint.display(),
            ck.params.kind,
            rc.contract.kind()
        )));
    }
    Ok(ck.params)
}

fn select_policy(choice: PolicyChoice, checkpoint: Option<&Path>, rc: &RunConfig) -> Result<Box<dyn Policy>> {
    match choice {
        PolicyChoice::Net => {
            let path = checkpoint.ok_or_else(|| Error::config("--checkpoint", "required for the net policy"))?;
            Ok(Box::new(NetPolicy::new(load_params(path, rc)?)))
        }
        PolicyChoice::Naive => Ok(Box::new(NetPolicy::naive(rc.contract.kind()))),
        PolicyChoice::HedgedNaive => Ok(Box::new(HedgedNaivePolicy)),
    }
}

fn policy_args(choice: PolicyChoice, checkpoint: Option<&Path>) -> Result<Vec<String>> {
    let mut v = vec!["--policy".to_string(), choice.to_possible_value().unwrap().get_name().to_string()];
    if let Some(c) = checkpoint {
        v.push("--checkpoint".into());
        v.push(absolute(c)?);
    }
    Ok(v)
}

#[derive(Debug, Serialize)]
struct TrainReport<'a> {
    tag: &'a str,
    seed: u64,
    restart: usize,
    epochs: usize,
    #[serde(flatten)]
    report: &'a EvalReport,
}

/// Prints held-out progress to stderr.
struct Progress<'a> {
    label: &'a str,
    normalizer: f64,
    quiet: bool,
}

impl TrainObserver for Progress<'_> {
    fn on_epoch(&mut self, p: &CurvePoint) {
        if let (false, Some(h)) = (self.quiet, p.heldout) {
            eprintln!(
                "{} epoch {:>5} {:<8} J_norm {:+.5e} held-out {:+.5e}",
                self.label,
                p.epoch + 1,
                p.phase.as_str(),
                p.normalized,
                h / self.normalizer
            );
        }
    }
}

/// Writes intermediate checkpoints under `dir/checkpoints/`.
struct Checkpointer<'a> {
    inner: Progress<'a>,
    dir: PathBuf,
}

impl TrainObserver for Checkpointer<'_> {
    fn on_epoch(&mut self, p: &CurvePoint) {
        self.inner.on_epoch(p);
    }
    fn on_checkpoint(&mut self, epoch: usize, params: &ParamStore) -> Result<()> {
        let dir = self.dir.join("checkpoints");
        create_dir(&dir)?;
        Checkpoint::new(params.clone(), epoch as u64).save(dir.join(format!("epoch-{epoch:06}.ckpt")))?;
        Ok(())
    }
}

/// Final report: the held-out evaluation, or a fresh batch of
/// `batch_size` paths when no held-out set is configured.
fn final_report(outcome: &TrainOutcome, rc: &RunConfig, tc: &TrainConfig) -> Result<EvalReport> {
    if let Some(r) = &outcome.heldout {
        return Ok(r.clone());
    }
    let paths = simulate_paths(&rc.market, tc.batch_size, tc.heldout_seed())?;
    evaluate(
        &NetPolicy::new(outcome.params.clone()),
        &rc.contract,
        &rc.market,
        &paths,
        tc.gamma,
        EvalMode::Relaxed,
        0,
    )
}

fn write_training_outputs(dir: &Path, rc: &RunConfig, tc: &TrainConfig, restart: usize, out: &TrainOutcome) -> Result<EvalReport> {
    write_curve(&dir.join("learning_curve.csv"), &out.curve)?;
    Checkpoint::new(out.params.clone(), out.curve.len() as u64).save(dir.join("model.ckpt"))?;
    let report = final_report(out, rc, tc)?;
    write_json(
        &dir.join("report.json"),
        &TrainReport {
            tag: &rc.tag,
            seed: tc.seed,
            restart,
            epochs: tc.epochs,
            report: &report,
        },
    )?;
    Ok(report)
}

fn handle_abort(dir: &Path, abort: Box<TrainAbort>) -> Error {
    let _ = write_curve(&dir.join("learning_curve.csv"), &abort.curve);
    let _ = Checkpoint::new(abort.last_good, abort.curve.len() as u64).save(dir.join("last_good.ckpt"));
    abort.error
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let rc = load(&a.common)?;
    if a.restarts == 0 {
        return Err(Error::config("--restarts", "must be at least 1"));
    }
    if a.restarts > 1 && rc.training.heldout_size == 0 {
        return Err(Error::config("training.heldout_size", "restarts are ranked on the held-out batch"));
    }
    let dir = out_dir(&a.common, &rc, None);
    create_dir(&dir)?;
    rc.write_manifest(&dir, "train", &recorded(&dir, vec!["--restarts".into(), a.restarts.to_string()])?)?;

    let normalizer = rc.contract.normalizer(rc.market.s0);
    let mut best: Option<(usize, TrainConfig, TrainOutcome)> = None;
    for r in 0..a.restarts {
        let tc = TrainConfig {
            seed: rc.training.restart_seed(r),
            ..rc.training.clone()
        };
        let label = format!("[{} restart {r}]", rc.tag);
        let mut obs = Checkpointer {
            inner: Progress {
                label: &label,
                normalizer,
                quiet: a.common.quiet,
            },
            dir: if a.restarts > 1 { dir.join(format!("restart-{r}")) } else { dir.clone() },
        };
        let out = train_from(tc.initial_params(&rc.contract), &rc.contract, &rc.market, &tc, &mut obs)
            .map_err(|e| handle_abort(&dir, e))?;
        let j = out.heldout.as_ref().map_or(f64::NEG_INFINITY, |h| h.j);
        if best.as_ref().is_none_or(|(_, _, b)| j > b.heldout.as_ref().map_or(f64::NEG_INFINITY, |h| h.j)) {
            best = Some((r, tc, out));
        }
    }
    let (r, tc, out) = best.expect("at least one restart");
    let report = write_training_outputs(&dir, &rc, &tc, r, &out)?;
    if !a.common.quiet {
        eprintln!("{}: J_normalized {:.6e} (restart {r})", rc.tag, report.j_normalized);
    }
    println!("{}", serde_json::to_string(&report).map_err(std::io::Error::from)?);
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let rc = load(&a.common)?;
    let policy = select_policy(a.policy, a.checkpoint.as_deref(), &rc)?;
    let count = a.paths.unwrap_or(rc.training.heldout_size);
    if count == 0 {
        return Err(Error::config("--paths", "must be at least 1"));
    }
    let dir = out_dir(&a.common, &rc, Some("evaluate"));
    let mut args = policy_args(a.policy, a.checkpoint.as_deref())?;
    args.extend([
        "--mode".into(),
        match a.mode {
            EvalMode::Relaxed => "relaxed".into(),
            EvalMode::Sampled => "sampled".into(),
        },
        "--paths".into(),
        count.to_string(),
    ]);
    let paths = simulate_paths(&rc.market, count, rc.training.heldout_seed())?;
    let report = evaluate(
        policy.as_ref(),
        &rc.contract,
        &rc.market,
        &paths,
        rc.training.gamma,
        a.mode,
        rc.training.seed,
    )?;
    create_dir(&dir)?;
    rc.write_manifest(&dir, "evaluate", &recorded(&dir, args)?)?;
    write_json(&dir.join("report.json"), &report)?;
    println!("{}", serde_json::to_string(&report).map_err(std::io::Error::from)?);
    Ok(())
}

pub fn cmd_trajectory_report(a: &TrajectoryArgs) -> Result<()> {
    let rc = load(&a.common)?;
    let policy = select_policy(a.policy, a.checkpoint.as_deref(), &rc)?;
    let mp = &rc.market;
    let (name, paths): (&str, Vec<Vec<f64>>) = match a.kind {
        PathKind::File => {
            let f = a
                .path_file
                .as_ref()
                .ok_or_else(|| Error::config("--path-file", "required with --kind file"))?;
            let ext = ExternalPaths::load(f).map_err(|e| match e {
                Error::Config { msg, .. } => Error::config("--path-file", msg),
                other => Error::config("--path-file", other.to_string()),
            })?;
            if ext.days() != mp.days {
                return Err(Error::Mismatch(format!(
                    "path file covers {} days, market has {}",
                    ext.days(),
                    mp.days
                )));
            }
            ("file", (0..ext.len()).map(|i| ext.path(i).to_vec()).collect())
        }
        kind => {
            if !(a.noise >= 0.0 && a.noise.is_finite()) {
                return Err(Error::config("--noise", "must be non-negative"));
            }
            let (name, sk) = match kind {
                PathKind::Up => ("up", StylizedKind::Up),
                PathKind::Down => ("down", StylizedKind::Down),
                _ => ("v-shape", StylizedKind::VShape),
            };
            (name, vec![stylized_path(mp, sk, a.noise, rc.training.seed)])
        }
    };
    let mut rows = Vec::new();
    for (i, prices) in paths.iter().enumerate() {
        let out = rollout_path(policy.as_ref(), prices, &rc.contract, mp)?;
        let stop = out.sampled_stop(&stop_uniforms(rc.training.seed, i, mp.days));
        rows.extend(trace_rows(i, &out, stop));
    }
    let dir = out_dir(&a.common, &rc, Some(&format!("trajectory-{name}")));
    let mut args = policy_args(a.policy, a.checkpoint.as_deref())?;
    args.extend(["--kind".into(), name.into(), "--noise".into(), a.noise.to_string()]);
    if let Some(f) = &a.path_file {
        args.extend(["--path-file".into(), absolute(f)?]);
    }
    create_dir(&dir)?;
    rc.write_manifest(&dir, "trajectory-report", &recorded(&dir, args)?)?;
    write_trace_csv(&rows, BufWriter::new(File::create(dir.join("trace.csv"))?))?;
    if !a.common.quiet {
        let settled: Vec<usize> = rows.iter().filter(|r| r.stopped).map(|r| r.day).collect();
        eprintln!("trace written to {} (settlement days {settled:?})", dir.join("trace.csv").display());
    }
    Ok(())
}

/// One swept value after training its restarts.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    #[serde(rename = "J_normalized")]
    pub j_normalized: f64,
}

/// Config of one sweep point.
pub fn sweep_point(rc: &RunConfig, param: &SweepParameter, value: f64) -> RunConfig {
    let mut point = rc.clone();
    match param {
        SweepParameter::Eta => point.market.eta = value,
        SweepParameter::Gamma => point.training.gamma = value,
    }
    point
}

/// Trains every `(value, restart)` pair in parallel and keeps, per value,
/// the restart with the best final held-out objective (lowest index on
/// ties).
pub fn run_sweep(
    rc: &RunConfig,
    sweep: &SweepSection,
    quiet: bool,
) -> Result<Vec<(RunConfig, TrainConfig, usize, TrainOutcome)>> {
    sweep.validate()?;
    if sweep.restarts > 1 && rc.training.heldout_size == 0 {
        return Err(Error::config("training.heldout_size", "restarts are ranked on the held-out batch"));
    }
    let points: Vec<RunConfig> = sweep.values.iter().map(|&v| sweep_point(rc, &sweep.parameter, v)).collect();
    for p in &points {
        p.market.validate()?;
        p.training.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|i| (0..sweep.restarts).map(move |r| (i, r)))
        .collect();
    let results: Vec<Result<TrainOutcome>> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let p = &points[i];
            let tc = TrainConfig {
                seed: p.training.restart_seed(r),
                ..p.training.clone()
            };
            let out = train_from(tc.initial_params(&p.contract), &p.contract, &p.market, &tc, &mut crate::training::Silent)
                .map_err(|e| e.error)?;
            if !quiet {
                let j = out.heldout.as_ref().map_or(f64::NAN, |h| h.j_normalized);
                eprintln!("{}={} restart {r}: held-out J_normalized {j:.6e}", sweep.parameter.as_str(), sweep.values[i]);
            }
            Ok(out)
        })
        .collect();
    let mut results = results.into_iter();
    let mut out = Vec::new();
    for p in points {
        let mut best: Option<(usize, TrainOutcome)> = None;
        for r in 0..sweep.restarts {
            let o = results.next().expect("one result per job")?;
            let j = o.heldout.as_ref().map_or(f64::NEG_INFINITY, |h| h.j);
            if best.as_ref().is_none_or(|(_, b)| j > b.heldout.as_ref().map_or(f64::NEG_INFINITY, |h| h.j)) {
                best = Some((r, o));
            }
        }
        let (r, o) = best.expect("at least one restart");
        let tc = TrainConfig {
            seed: p.training.restart_seed(r),
            ..p.training.clone()
        };
        out.push((p, tc, r, o));
    }
    Ok(out)
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let mut rc = load(&a.common)?;
    let file = rc.sweep.clone();
    let parameter = a
        .param
        .clone()
        .or_else(|| file.as_ref().map(|s| s.parameter.clone()))
        .ok_or_else(|| Error::config("sweep.parameter", "give --param or a [sweep] table"))?;
    let values = a
        .values
        .clone()
        .or_else(|| file.as_ref().map(|s| s.values.clone()))
        .ok_or_else(|| Error::config("sweep.values", "give --values or a [sweep] table"))?;
    let restarts = a
        .restarts
        .or_else(|| file.as_ref().map(|s| s.restarts))
        .unwrap_or(DEFAULT_RESTARTS);
    let sweep = SweepSection {
        parameter,
        values,
        restarts,
    };
    sweep.validate()?;
    rc.sweep = Some(sweep.clone());
    let dir = out_dir(&a.common, &rc, None);

    let results = run_sweep(&rc, &sweep, a.common.quiet)?;
    create_dir(&dir)?;
    rc.write_manifest(&dir, "sweep", &recorded(&dir, Vec::new())?)?;
    let mut rows = Vec::new();
    for (p, tc, r, o) in &results {
        let value = match sweep.parameter {
            SweepParameter::Eta => p.market.eta,
            SweepParameter::Gamma => p.training.gamma,
        };
        let sub = dir.join(format!("{}-{}", sweep.parameter.as_str(), value));
        create_dir(&sub)?;
        let report = write_training_outputs(&sub, p, tc, *r, o)?;
        rows.push(SweepRow {
            param: sweep.parameter.as_str().into(),
            value,
            j_normalized: report.j_normalized,
        });
    }
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    for row in &rows {
        println!("{},{},{}", row.param, row.value, row.j_normalized);
    }
    Ok(())
}

pub fn cmd_simulate_paths(a: &SimulateArgs) -> Result<()> {
    let rc = load(&a.common)?;
    if a.count == 0 {
        return Err(Error::config("--count", "must be at least 1"));
    }
    let batch = simulate_paths(&rc.market, a.count, rc.training.seed)?;
    let dir = out_dir(&a.common, &rc, Some("paths"));
    create_dir(&dir)?;
    rc.write_manifest(&dir, "simulate-paths", &recorded(&dir, vec!["--count".into(), a.count.to_string()])?)?;
    batch.write_csv(BufWriter::new(File::create(dir.join("paths.csv"))?))?;
    Ok(())
}

pub fn cmd_grad_check(a: &GradCheckArgs) -> Result<()> {
    if !(a.tolerance > 0.0) {
        return Err(Error::config("--tolerance", "must be positive"));
    }
    let reports: Vec<GradCheckReport> = (0..a.seeds).into_par_iter().map(grad_check).collect::<Result<_>>()?;
    create_dir(&a.out)?;
    let mut w = BufWriter::new(File::create(a.out.join("grad_check.jsonl"))?);
    let mut failed = 0;
    println!("{:>6} {:<15} {:>7} {:>7} {:>12}  result", "seed", "contract", "checked", "skipped", "max rel err");
    for r in &reports {
        let pass = r.max_rel_error < a.tolerance;
        failed += usize::from(!pass);
        println!(
            "{:>6} {:<15} {:>7} {:>7} {:>12.3e}  {}",
            r.seed,
            r.contract,
            r.checked,
            r.skipped,
            r.max_rel_error,
            if pass { "pass" } else { "FAIL" }
        );
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        writeln!(w)?;
    }
    w.flush()?;
    if failed > 0 {
        return Err(Error::Numerical(format!("{failed} of {} gradient checks failed", reports.len())));
    }
    Ok(())
}

pub fn cmd_oracle_check(a: &OracleCheckArgs) -> Result<()> {
    if a.paths < 2 {
        return Err(Error::config("--paths", "must be at least 2"));
    }
    let checks = run_oracle_checks(a.paths, a.seed)?;
    create_dir(&a.out)?;
    let mut w = BufWriter::new(File::create(a.out.join("oracle_checks.jsonl"))?);
    println!("{:<34} {:>16} {:>16} {:>12}  result", "check", "value", "reference", "tolerance");
    let mut failed = 0;
    for c in &checks {
        failed += usize::from(!c.passed);
        println!(
            "{:<34} {:>16.9e} {:>16.9e} {:>12.3e}  {}",
            c.name,
            c.value,
            c.reference,
            c.tolerance,
            if c.passed { "pass" } else { "FAIL" }
        );
        serde_json::to_writer(&mut w, c).map_err(std::io::Error::from)?;
        writeln!(w)?;
    }
    w.flush()?;
    if failed > 0 {
        return Err(Error::Numerical(format!("{failed} of {} oracle checks failed", checks.len())));
    }
    Ok(())
}

pub fn cmd_rerun(a: &RerunArgs) -> Result<()> {
    let file = ConfigFile::load(&a.manifest)?;
    let section = file
        .run
        .as_ref()
        .ok_or_else(|| Error::config("run", "not a manifest: missing [run] table"))?;
    if section.version != env!("CARGO_PKG_VERSION") && !a.quiet {
        eprintln!("warning: manifest written by version {}, running {}", section.version, env!("CARGO_PKG_VERSION"));
    }
    let mut argv: Vec<String> = vec!["buyback".into(), section.command.clone(), a.manifest.display().to_string()];
    argv.extend(with_out(&section.arguments, a.out.as_deref()));
    if a.quiet {
        argv.push("--quiet".into());
    }
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::config("run.arguments", e.to_string()))?;
    if matches!(cli.command, Command::Rerun(_) | Command::GradCheck(_) | Command::OracleCheck(_)) {
        return Err(Error::config("run.command", format!("`{}` cannot be replayed from a manifest", section.command)));
    }
    run(cli.command)
}

/// Recorded arguments with the output directory replaced by `out`.
fn with_out(recorded: &[String], out: Option<&Path>) -> Vec<String> {
    let mut args = Vec::with_capacity(recorded.len() + 2);
    let mut it = recorded.iter();
    while let Some(a) = it.next() {
        if a == "--out" && out.is_some() {
            it.next();
        } else {
            args.push(a.clone());
        }
    }
    if let Some(o) = out {
        args.extend(["--out".into(), o.display().to_string()]);
    }
    args
}
