//! Command-line front end: TOML-configured experiment runs that leave a
//! directory of deterministic artifacts.
//!
//! Seven subcommands cover the verification workflow end to end:
//!
//! ```text
//!   check      scan the model, certify the standing assumptions
//!   simulate   one trajectory + Monte Carlo drift check
//!   couple     coupled path, coupling/hitting-time tails, Q-branch mass
//!   distance   one bounded-Lipschitz distance with its dual witness
//!   rate       convergence curve n ↦ D_n and geometric-rate fit
//!   clt        normalized sums η_n, normality test, variance curve
//!   mw         Maxwell–Woodroofe series s_n and boundedness verdict
//! ```
//!
//! Every run reads one TOML file (`[model]` and `[experiment]` tables, all
//! keys optional) plus `--seed/--out/--threads` overrides, and writes
//!
//! * CSV tables specific to the subcommand,
//! * `summary.json` — scalar results, sorted keys, trailing newline,
//! * `run_info.json` — wall time and thread count.
//!
//! Everything except `run_info.json` is a pure function of the resolved
//! configuration and the seed: rerunning with a different `--threads`
//! value must reproduce every other artifact byte for byte. The summary
//! records `config_sha256`, the SHA-256 of the canonical JSON rendering of
//! the resolved configuration with the output path blanked (where results
//! land does not change what they are), so artifacts can be traced to
//! their inputs.
//!
//! Exit codes: `0` success, `2` invalid configuration, `3` failed
//! assumption check (including a failing `check` verdict), `4` I/O error.
//! On failure a machine-readable `error.json` is left in the output
//! directory when it is writable.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::chain::{drift_check, push_forward, simulate, stationary_estimate};
use crate::climit::{
    center_g, clt_report, eta_samples, mw_summands, ClimitError, EtaInit, RawObservable,
};
use crate::coupling::{coupling_time, q_mass_check, simulate_coupled, tail_report};
use crate::measure::EmpiricalMeasure;
use crate::metrics::{
    bl_distance_with, convergence_curve, fit_geometric_rate, split_half_floor, BlOptions,
    CurveMode, LpStatus,
};
use crate::model::{
    build_model, check_assumptions, AssumptionReport, ModelConfig, ModelError, ModelSpec,
};
use crate::report::{sha256_hex, vector_columns, Cell, Summary, Table};
use crate::report::read_cloud;
use crate::sampling::RngStream;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ASSUMPTION: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Fixed stream identifiers, one per random artifact. These are part of
/// the reproducibility contract: changing them changes every published
/// artifact, so they are never reused or renumbered.
mod stream {
    pub const SIM_PATH: u64 = 101;
    pub const SIM_DRIFT: u64 = 102;
    pub const COUPLE_PATH: u64 = 201;
    pub const COUPLE_TAILS: u64 = 202;
    pub const COUPLE_QMASS: u64 = 203;
    pub const DIST_EVOLVE: u64 = 301;
    pub const DIST_REFERENCE: u64 = 302;
    pub const RATE_REFERENCE: u64 = 401;
    pub const RATE_CURVE: u64 = 402;
    pub const CLT_REFERENCE: u64 = 501;
    /// Base id for the η-sample sweep; the sweep index is added to it.
    pub const CLT_ETA: u64 = 510;
    pub const MW_REFERENCE: u64 = 601;
    pub const MW_SERIES: u64 = 602;
}

#[derive(Debug, Parser)]
#[command(
    name = "ifs-lab",
    version,
    about = "Simulation and verification toolkit for randomly perturbed iterated function systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandKind,
    /// TOML run configuration; defaults apply for every omitted key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the configured one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the configured one.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker thread count (0 or omitted: library default). Affects wall
    /// time only, never results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum CommandKind {
    /// Scan the model and certify the standing assumptions.
    Check,
    /// Simulate one trajectory and run the Monte Carlo drift check.
    Simulate,
    /// Run the coupling: sample path, tail statistics, Q-branch mass.
    Couple,
    /// Compute one bounded-Lipschitz distance with its dual witness.
    Distance,
    /// Sample a convergence curve and fit the geometric rate.
    Rate,
    /// Sample normalized sums and test them against the normal law.
    Clt,
    /// Estimate the Maxwell–Woodroofe series and check boundedness.
    Mw,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::Check => "check",
            CommandKind::Simulate => "simulate",
            CommandKind::Couple => "couple",
            CommandKind::Distance => "distance",
            CommandKind::Rate => "rate",
            CommandKind::Clt => "clt",
            CommandKind::Mw => "mw",
        }
    }
}

/// Resolved run configuration: the TOML file with CLI overrides applied.
/// Unknown keys are rejected so typos fail loudly instead of silently
/// running with defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: String,
    pub model: ModelConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out: "out".into(),
            model: ModelConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

/// Experiment-level knobs shared across subcommands. Each subcommand reads
/// the subset it needs and ignores the rest, so one config file can drive
/// a whole workflow.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Step count for `simulate`, `distance` (cloud evolution), and `rate`
    /// (curve length).
    pub n: usize,
    /// Coupled-path length for `couple`.
    pub horizon: usize,
    /// Monte Carlo replica count for drift, tails, and Q-mass runs.
    pub replicas: usize,
    /// Particles per cloud in `distance` and `rate`.
    pub particles: usize,
    /// Burn-in steps before collecting invariant-measure samples.
    pub burn_in: usize,
    /// Invariant-measure sample count.
    pub samples: usize,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    /// ϰ as a fraction of `1 − a` in the small-set threshold.
    pub kappa_frac: f64,
    /// Exponent ζ ∈ (0,1) of the hitting-time moment `(a+ϰ)^{−ζd}`.
    pub zeta: f64,
    /// Comparison rate ã ∈ (a, 1) for the Q-branch mass check.
    pub a_tilde: f64,
    /// Starting-pair radius for the Q-branch mass check.
    pub r: f64,
    /// Number of starting pairs for the Q-branch mass check.
    pub pairs: usize,
    /// Steps n in the Q-branch event `θ_1 = … = θ_n = 1, ϱ_n < ãⁿ·r`.
    pub q_steps: usize,
    /// Convergence-curve mode: `pair` or `measure`.
    pub mode: String,
    /// Quantile bins per cloud before the distance LP.
    pub bins: usize,
    /// Chain length n for the normalized sums η_n.
    pub eta_n: usize,
    /// Replicas per chain length in the η sweep.
    pub eta_replicas: usize,
    /// Largest n of the Maxwell–Woodroofe series.
    pub mw_n_max: usize,
    /// Inner Monte Carlo paths per outer point in the series estimate.
    pub inner_replicas: usize,
    /// Outer quantile representatives of μ̂* in the series estimate.
    pub outer_points: usize,
    /// KS threshold for the `clt` verdict.
    pub ks_threshold: f64,
    /// Optional input clouds for `distance`; both or neither must be set.
    pub mu_csv: String,
    pub nu_csv: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 15,
            horizon: 50,
            replicas: 10_000,
            particles: 100_000,
            burn_in: 1_000,
            samples: 100_000,
            x0: vec![0.0],
            y0: vec![5.0],
            kappa_frac: 0.5,
            zeta: 0.5,
            a_tilde: 0.9,
            r: 0.1,
            pairs: 10,
            q_steps: 5,
            mode: "pair".into(),
            bins: 256,
            eta_n: 2048,
            eta_replicas: 4096,
            mw_n_max: 64,
            inner_replicas: 512,
            outer_points: 256,
            ks_threshold: 0.05,
            mu_csv: String::new(),
            nu_csv: String::new(),
        }
    }
}

/// Run-level failures, keyed to the exit codes documented above.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("assumption check failed: {0}")]
    Assumption(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Assumption(_) => EXIT_ASSUMPTION,
            RunError::Io(_) => EXIT_IO,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Assumption(_) => "assumption",
            RunError::Io(_) => "io",
        }
    }
}

fn io_err(e: io::Error) -> RunError {
    RunError::Io(e.to_string())
}

fn cfg_err(e: impl std::fmt::Display) -> RunError {
    RunError::Config(e.to_string())
}

/// Assumption-scan failures are genuine rejections of the model (exit 3),
/// except for grid mistakes, which are the caller's configuration.
fn scan_err(e: ModelError) -> RunError {
    match e {
        ModelError::InvalidGrid(_) => RunError::Config(e.to_string()),
        other => RunError::Assumption(other.to_string()),
    }
}

/// [`ClimitError::ZeroVariance`] means the observable carries no
/// distribution to test on this model — an assumption-level failure, not a
/// config mistake.
fn climit_err(e: ClimitError) -> RunError {
    match e {
        ClimitError::ZeroVariance => RunError::Assumption(e.to_string()),
        ClimitError::BadParameter(_) => RunError::Config(e.to_string()),
    }
}

/// Entry point for the binary: runs the subcommand and converts the
/// outcome to an exit code, leaving `error.json` behind on failure.
pub fn run(cli: &Cli) -> i32 {
    let started = Instant::now();
    match execute(cli, started) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            write_error_record(cli, &err);
            err.exit_code()
        }
    }
}

fn execute(cli: &Cli, started: Instant) -> Result<i32, RunError> {
    let cfg = load_config(cli)?;
    let out_dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&out_dir).map_err(|e| {
        RunError::Io(format!(
            "cannot create output directory {}: {e}",
            out_dir.display()
        ))
    })?;
    // The fingerprint covers what determines the results, not where they
    // are written: blank the output path before hashing.
    let mut fingerprint = cfg.clone();
    fingerprint.out = String::new();
    let rendered = serde_json::to_string(&fingerprint).map_err(cfg_err)?;
    let hash = sha256_hex(rendered.as_bytes());
    let name = cli.command.name();
    let mut summary = Summary::new(name, cfg.seed, &hash);
    let verdict_ok = match cli.command {
        CommandKind::Check => cmd_check(&cfg, &mut summary)?,
        CommandKind::Simulate => cmd_simulate(&cfg, &out_dir, &mut summary)?,
        CommandKind::Couple => cmd_couple(&cfg, &out_dir, &mut summary)?,
        CommandKind::Distance => cmd_distance(&cfg, &out_dir, &mut summary)?,
        CommandKind::Rate => cmd_rate(&cfg, &out_dir, &mut summary)?,
        CommandKind::Clt => cmd_clt(&cfg, &out_dir, &mut summary)?,
        CommandKind::Mw => cmd_mw(&cfg, &out_dir, &mut summary)?,
    };
    summary.write(&out_dir.join("summary.json")).map_err(io_err)?;
    write_run_info(&out_dir, name, started)?;
    Ok(if verdict_ok { EXIT_OK } else { EXIT_ASSUMPTION })
}

fn load_config(cli: &Cli) -> Result<RunConfig, RunError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                RunError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| RunError::Config(format!("invalid config: {e}")))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }
    Ok(cfg)
}

/// Best-effort `error.json`; resolves the output directory the same way a
/// successful run would, falling back to the default when the config
/// itself is unreadable.
fn write_error_record(cli: &Cli, err: &RunError) {
    let out = cli
        .out
        .as_ref()
        .map(|p| p.display().to_string())
        .or_else(|| {
            let path = cli.config.as_ref()?;
            let text = fs::read_to_string(path).ok()?;
            toml::from_str::<RunConfig>(&text).ok().map(|c| c.out)
        })
        .unwrap_or_else(|| RunConfig::default().out);
    let dir = PathBuf::from(out);
    if fs::create_dir_all(&dir).is_err() {
        return;
    }
    let mut map = BTreeMap::new();
    map.insert("exit_code", serde_json::json!(err.exit_code()));
    map.insert("kind", serde_json::json!(err.kind()));
    map.insert("message", serde_json::json!(err.to_string()));
    if let Ok(text) = serde_json::to_string_pretty(&map) {
        let _ = fs::write(dir.join("error.json"), text + "\n");
    }
}

fn write_run_info(out_dir: &Path, subcommand: &str, started: Instant) -> Result<(), RunError> {
    let mut map = BTreeMap::new();
    map.insert("subcommand", serde_json::json!(subcommand));
    map.insert("threads", serde_json::json!(rayon::current_num_threads()));
    map.insert(
        "wall_ms",
        serde_json::json!(started.elapsed().as_millis() as u64),
    );
    let text = serde_json::to_string_pretty(&map).map_err(cfg_err)?;
    fs::write(out_dir.join("run_info.json"), text + "\n").map_err(io_err)
}

/// Builds the model and certifies the standing assumptions; experiments
/// other than `check` refuse to run on an uncertified model.
fn certified(cfg: &RunConfig) -> Result<(ModelSpec, AssumptionReport), RunError> {
    let model = build_model(&cfg.model).map_err(cfg_err)?;
    let report =
        check_assumptions(&model, cfg.model.t_nodes, cfg.model.x_nodes).map_err(scan_err)?;
    if !report.all_ok() {
        return Err(RunError::Assumption(format!(
            "standing assumptions fail on this model: {}",
            failed_verdicts(&report).join(", ")
        )));
    }
    Ok((model, report))
}

/// Like [`certified`] but additionally demands `Λ < 1/2`, which the
/// second-moment diagnostics (`clt`, `mw`) rely on.
fn certified_second_moment(cfg: &RunConfig) -> Result<(ModelSpec, AssumptionReport), RunError> {
    let (model, report) = certified(cfg)?;
    if !report.lambda_half_ok {
        return Err(RunError::Assumption(format!(
            "second moment Λ = {} is not below 1/2; the normalized-sum diagnostics need it",
            report.lambda_hat
        )));
    }
    Ok((model, report))
}

fn failed_verdicts(report: &AssumptionReport) -> Vec<&'static str> {
    let mut out = Vec::new();
    if !report.a_ok {
        out.push("a < 1");
    }
    if !report.lambda_ok {
        out.push("Lambda < 1");
    }
    if !report.dini_ok {
        out.push("Dini modulus");
    }
    if !report.normalization_ok {
        out.push("density normalization");
    }
    if !report.positivity_ok {
        out.push("density positivity");
    }
    out
}

fn point_arg(v: &[f64], dim: usize, name: &str) -> Result<Vec<f64>, RunError> {
    if v.len() != dim {
        return Err(RunError::Config(format!(
            "{name} has dimension {}, the model needs {dim}",
            v.len()
        )));
    }
    Ok(v.to_vec())
}

fn status_str(status: LpStatus) -> &'static str {
    match status {
        LpStatus::Optimal => "optimal",
        LpStatus::IterationLimit => "iteration-limit",
    }
}

fn cmd_check(cfg: &RunConfig, summary: &mut Summary) -> Result<bool, RunError> {
    let model = build_model(&cfg.model).map_err(cfg_err)?;
    let report =
        check_assumptions(&model, cfg.model.t_nodes, cfg.model.x_nodes).map_err(scan_err)?;
    let consts = report.constants();
    summary.set("assumptions", report.to_flat_json());
    summary.set("all_ok", report.all_ok());
    summary.set("constants", consts);
    summary.set(
        "small_set_threshold",
        consts.small_set_threshold(cfg.experiment.kappa_frac),
    );
    summary.set("gamma_bar", consts.gamma_bar(cfg.experiment.a_tilde));
    Ok(report.all_ok())
}

fn cmd_simulate(cfg: &RunConfig, out_dir: &Path, summary: &mut Summary) -> Result<bool, RunError> {
    let (model, report) = certified(cfg)?;
    let consts = report.constants();
    let e = &cfg.experiment;
    let x0 = point_arg(&e.x0, model.dim(), "x0")?;
    if e.n < 1 {
        return Err(RunError::Config("n must be at least 1".into()));
    }

    let mut rng = RngStream::new(cfg.seed, stream::SIM_PATH);
    let traj = simulate(&model, &x0, e.n, &mut rng);
    let mut cols = vec!["step".to_string(), "t".to_string()];
    cols.extend(vector_columns("x", model.dim()));
    cols.extend(vector_columns("h", model.dim()));
    let mut table = Table::new(cols);
    for k in 1..=e.n {
        let mut row = vec![Cell::from(k as i64), Cell::from(traj.time(k))];
        row.extend(traj.state(k).iter().map(|&v| Cell::from(v)));
        row.extend(traj.perturbation(k).iter().map(|&v| Cell::from(v)));
        table.push(row);
    }
    table.write(&out_dir.join("trajectory.csv")).map_err(io_err)?;

    let drift = drift_check(
        &model,
        &consts,
        &x0,
        e.n as u32,
        e.replicas,
        &RngStream::new(cfg.seed, stream::SIM_DRIFT),
    )
    .map_err(cfg_err)?;
    let mut dt = Table::new([
        "n", "v_mean", "v_se", "v_bound", "v2_mean", "v2_se", "v2_bound",
    ]);
    for r in &drift.rows {
        dt.push(vec![
            Cell::from(i64::from(r.n)),
            Cell::from(r.v_mean),
            Cell::from(r.v_se),
            Cell::from(r.v_bound),
            Cell::from(r.v2_mean),
            Cell::from(r.v2_se),
            Cell::from(r.v2_bound),
        ]);
    }
    dt.write(&out_dir.join("drift.csv")).map_err(io_err)?;

    summary.set("n", e.n);
    summary.set("replicas", e.replicas);
    summary.set("x0", &x0);
    summary.set("final_state", traj.final_state());
    summary.set("replay_exact", traj.replay_exact(&model));
    summary.set("drift_all_within_3se", drift.all_within(3.0));
    summary.set("constants", consts);
    Ok(true)
}

fn cmd_couple(cfg: &RunConfig, out_dir: &Path, summary: &mut Summary) -> Result<bool, RunError> {
    let (model, report) = certified(cfg)?;
    let consts = report.constants();
    let e = &cfg.experiment;
    let x0 = point_arg(&e.x0, model.dim(), "x0")?;
    let y0 = point_arg(&e.y0, model.dim(), "y0")?;
    if e.horizon < 2 {
        return Err(RunError::Config("horizon must be at least 2".into()));
    }

    let mut rng = RngStream::new(cfg.seed, stream::COUPLE_PATH);
    let path = simulate_coupled(&model, &x0, &y0, e.horizon, &mut rng);
    let mut cols = vec!["step".to_string()];
    cols.extend(vector_columns("x", model.dim()));
    cols.extend(vector_columns("y", model.dim()));
    cols.extend(["theta".to_string(), "t_x".to_string(), "t_y".to_string()]);
    cols.extend(vector_columns("h", model.dim()));
    cols.push("dist".to_string());
    let mut table = Table::new(cols);
    for k in 1..=e.horizon {
        let mut row = vec![Cell::from(k as i64)];
        row.extend(path.x_state(k).iter().map(|&v| Cell::from(v)));
        row.extend(path.y_state(k).iter().map(|&v| Cell::from(v)));
        row.push(Cell::from(i64::from(path.theta(k))));
        row.push(Cell::from(path.t_x(k)));
        row.push(Cell::from(path.t_y(k)));
        row.extend(path.h(k).iter().map(|&v| Cell::from(v)));
        row.push(Cell::from(path.distance(k)));
        table.push(row);
    }
    table
        .write(&out_dir.join("coupled_path.csv"))
        .map_err(io_err)?;
    let (tau, censored) = coupling_time(&path);
    summary.set("path_tau_hat", tau);
    summary.set("path_tau_censored", censored);

    let tails = tail_report(
        &model,
        &consts,
        &x0,
        &y0,
        e.horizon,
        e.replicas,
        e.kappa_frac,
        e.zeta,
        &RngStream::new(cfg.seed, stream::COUPLE_TAILS),
    )
    .map_err(cfg_err)?;
    let mut tt = Table::new(["n", "p_tau", "tau_lo", "tau_hi", "p_d", "d_lo", "d_hi"]);
    for r in &tails.rows {
        tt.push(vec![
            Cell::from(i64::from(r.n)),
            Cell::from(r.p_tau),
            Cell::from(r.tau_lo),
            Cell::from(r.tau_hi),
            Cell::from(r.p_d),
            Cell::from(r.d_lo),
            Cell::from(r.d_hi),
        ]);
    }
    tt.write(&out_dir.join("tails.csv")).map_err(io_err)?;

    let pairs = spread_pairs(&model, e.pairs, e.r)?;
    let qm = q_mass_check(
        &model,
        &consts,
        &pairs,
        e.q_steps,
        e.r,
        e.a_tilde,
        e.replicas,
        &RngStream::new(cfg.seed, stream::COUPLE_QMASS),
    )
    .map_err(cfg_err)?;
    let mut qt = Table::new(["pair", "start_distance", "p_hat", "lo", "hi"]);
    for r in &qm.rows {
        qt.push(vec![
            Cell::from(r.pair as i64),
            Cell::from(r.start_distance),
            Cell::from(r.p_hat),
            Cell::from(r.lo),
            Cell::from(r.hi),
        ]);
    }
    qt.write(&out_dir.join("qmass.csv")).map_err(io_err)?;

    summary.set("horizon", e.horizon);
    summary.set("replicas", e.replicas);
    summary.set("kappa", tails.kappa);
    summary.set("zeta", tails.zeta);
    summary.set("mean_tau_hat", tails.mean_tau_hat);
    summary.set("censored_fraction", tails.censored_fraction);
    summary.set("censoring_warning", tails.censoring_warning);
    summary.set("never_hit_fraction", tails.never_hit_fraction);
    summary.set("moment_mean", tails.moment_mean);
    summary.set("moment_se", tails.moment_se);
    summary.set("tau_slope", tails.tau_fit.as_ref().map(|f| f.slope));
    summary.set("tau_r_squared", tails.tau_fit.as_ref().map(|f| f.r_squared));
    summary.set("d_slope", tails.d_fit.as_ref().map(|f| f.slope));
    summary.set("d_r_squared", tails.d_fit.as_ref().map(|f| f.r_squared));
    summary.set(
        "tau_slope_negative",
        tails.tau_fit.as_ref().map(|f| f.slope < 0.0),
    );
    summary.set("q_steps", qm.n);
    summary.set("q_replicas", qm.replicas);
    summary.set("gamma_bar", qm.gamma_bar);
    summary.set("q_bound", qm.bound());
    summary.set("q_all_positive", qm.all_positive());
    summary.set("q_all_meet_bound", qm.all_meet_bound());
    Ok(true)
}

/// Starting pairs for the Q-branch mass check: `count` pairs spread across
/// the window's first coordinate, each at distance `r` (to the ulp below:
/// the rounded sum `a + r` can land just outside the closed ball the check
/// demands, so the second point is walked back onto it).
fn spread_pairs(
    model: &ModelSpec,
    count: usize,
    r: f64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, RunError> {
    if count < 1 {
        return Err(RunError::Config("pairs must be at least 1".into()));
    }
    let lo = model.window().lo()[0];
    let hi = model.window().hi()[0];
    if !(r > 0.0) || r >= hi - lo {
        return Err(RunError::Config(format!(
            "pair radius r = {r} does not fit in the window [{lo}, {hi}]"
        )));
    }
    let reference = model.system().reference().to_vec();
    Ok((0..count)
        .map(|i| {
            let frac = (i + 1) as f64 / (count + 1) as f64;
            let mut a = reference.clone();
            a[0] = lo + (hi - lo - r) * frac;
            let mut b = a.clone();
            b[0] += r;
            while b[0] - a[0] > r {
                b[0] = b[0].next_down();
            }
            (a, b)
        })
        .collect())
}

fn cmd_distance(cfg: &RunConfig, out_dir: &Path, summary: &mut Summary) -> Result<bool, RunError> {
    let e = &cfg.experiment;
    let opts = BlOptions {
        bins: e.bins,
        ..BlOptions::default()
    };
    let from_files = match (e.mu_csv.is_empty(), e.nu_csv.is_empty()) {
        (false, false) => true,
        (true, true) => false,
        _ => {
            return Err(RunError::Config(
                "mu_csv and nu_csv must be set together (or both left empty)".into(),
            ))
        }
    };

    let (mu, nu, noise_floor) = if from_files {
        let mu = read_cloud(Path::new(&e.mu_csv))
            .map_err(|err| RunError::Io(format!("reading {}: {err}", e.mu_csv)))?;
        let nu = read_cloud(Path::new(&e.nu_csv))
            .map_err(|err| RunError::Io(format!("reading {}: {err}", e.nu_csv)))?;
        (mu, nu, None)
    } else {
        let (model, _) = certified(cfg)?;
        let x0 = point_arg(&e.x0, model.dim(), "x0")?;
        if e.particles < 1 {
            return Err(RunError::Config("particles must be at least 1".into()));
        }
        let mut flat = Vec::with_capacity(e.particles * model.dim());
        for _ in 0..e.particles {
            flat.extend_from_slice(&x0);
        }
        let mut mu = EmpiricalMeasure::uniform(model.dim(), flat)
            .expect("replicated start point is a valid cloud");
        let parent = RngStream::new(cfg.seed, stream::DIST_EVOLVE);
        for k in 0..e.n {
            mu = push_forward(&model, &mu, &parent.substream(k as u64));
        }
        let st = stationary_estimate(
            &model,
            e.burn_in,
            e.samples,
            &RngStream::new(cfg.seed, stream::DIST_REFERENCE),
        )
        .map_err(cfg_err)?;
        let floor = split_half_floor(&st.measure, &opts).map_err(cfg_err)?;
        (mu, st.measure, Some(floor))
    };

    let res = bl_distance_with(&mu, &nu, &opts).map_err(cfg_err)?;
    let mut cols = vec!["index".to_string()];
    cols.extend(vector_columns("z", res.dim));
    cols.extend(["weight".to_string(), "f".to_string()]);
    let mut table = Table::new(cols);
    for i in 0..res.support_len() {
        let mut row = vec![Cell::from(i as i64)];
        row.extend(res.support_point(i).iter().map(|&v| Cell::from(v)));
        row.push(Cell::from(res.weights[i]));
        row.push(Cell::from(res.witness[i]));
        table.push(row);
    }
    table.write(&out_dir.join("witness.csv")).map_err(io_err)?;

    summary.set("value", res.value);
    summary.set("status", status_str(res.status));
    summary.set("support_len", res.support_len());
    summary.set("bins", e.bins);
    summary.set("mu_points", mu.len());
    summary.set("nu_points", nu.len());
    summary.set("source", if from_files { "files" } else { "simulated" });
    summary.set("noise_floor", noise_floor);
    Ok(true)
}

fn cmd_rate(cfg: &RunConfig, out_dir: &Path, summary: &mut Summary) -> Result<bool, RunError> {
    let (model, _) = certified(cfg)?;
    let e = &cfg.experiment;
    let opts = BlOptions {
        bins: e.bins,
        ..BlOptions::default()
    };
    let x0 = point_arg(&e.x0, model.dim(), "x0")?;
    let rng = RngStream::new(cfg.seed, stream::RATE_CURVE);
    let curve = match e.mode.as_str() {
        "pair" => {
            let y0 = point_arg(&e.y0, model.dim(), "y0")?;
            convergence_curve(
                &model,
                CurveMode::Pair { x: &x0, y: &y0 },
                e.n,
                e.particles,
                &opts,
                &rng,
            )
        }
        "measure" => {
            let st = stationary_estimate(
                &model,
                e.burn_in,
                e.samples,
                &RngStream::new(cfg.seed, stream::RATE_REFERENCE),
            )
            .map_err(cfg_err)?;
            let mu0 = EmpiricalMeasure::dirac(&x0);
            convergence_curve(
                &model,
                CurveMode::Measure {
                    mu0: &mu0,
                    reference: &st.measure,
                },
                e.n,
                e.particles,
                &opts,
                &rng,
            )
        }
        other => {
            return Err(RunError::Config(format!(
                "unknown rate mode `{other}` (expected `pair` or `measure`)"
            )))
        }
    }
    .map_err(cfg_err)?;

    let mut table = Table::new(["n", "distance", "noise_floor"]);
    for p in &curve {
        table.push(vec![
            Cell::from(i64::from(p.n)),
            Cell::from(p.distance),
            Cell::from(p.noise_floor),
        ]);
    }
    table.write(&out_dir.join("curve.csv")).map_err(io_err)?;

    // Fit only rows clearly above their statistical resolution; keeping
    // floor-level rows would flatten the estimated rate.
    let pts: Vec<(u32, f64)> = curve
        .iter()
        .filter(|p| p.n >= 1 && p.distance > 2.0 * p.noise_floor)
        .map(|p| (p.n, p.distance))
        .collect();
    summary.set("mode", e.mode.as_str());
    summary.set("particles", e.particles);
    summary.set("n_max", e.n);
    summary.set("points_above_floor", pts.len());
    match fit_geometric_rate(&pts) {
        Ok(fit) => {
            summary.set("q_hat", fit.q_hat);
            summary.set("c_hat", fit.c_hat);
            summary.set("r_squared", fit.r_squared);
            summary.set("fit_n_lo", fit.n_lo);
            summary.set("fit_n_hi", fit.n_hi);
            summary.set("points_used", fit.points_used);
            summary.set("q_lt_1", fit.q_hat < 1.0);
        }
        Err(err) => {
            summary.set("q_hat", Option::<f64>::None);
            summary.set("fit_note", err.to_string());
        }
    }
    Ok(true)
}

fn cmd_clt(cfg: &RunConfig, out_dir: &Path, summary: &mut Summary) -> Result<bool, RunError> {
    let (model, _) = certified_second_moment(cfg)?;
    let e = &cfg.experiment;
    if e.eta_n < 4 {
        return Err(RunError::Config("eta_n must be at least 4".into()));
    }
    let st = stationary_estimate(
        &model,
        e.burn_in,
        e.samples,
        &RngStream::new(cfg.seed, stream::CLT_REFERENCE),
    )
    .map_err(cfg_err)?;
    let g = center_g(RawObservable::clamp_at_median(&st.measure), &st.measure);

    let mut lengths = vec![e.eta_n / 4, e.eta_n / 2, e.eta_n];
    lengths.dedup();
    let mut variance_curve = Vec::with_capacity(lengths.len());
    let mut etas_main = Vec::new();
    for (idx, &len) in lengths.iter().enumerate() {
        let etas = eta_samples(
            &model,
            &g,
            len,
            e.eta_replicas,
            EtaInit::Stationary(&st.measure),
            &RngStream::new(cfg.seed, stream::CLT_ETA + idx as u64),
        )
        .map_err(climit_err)?;
        variance_curve.push((len as u32, crate::stats::sample_variance(&etas)));
        if len == e.eta_n {
            etas_main = etas;
        }
    }
    let mut rep = clt_report(e.eta_n, &etas_main).map_err(climit_err)?;
    rep.variance_curve = variance_curve;

    let mut et = Table::new(["replica", "eta"]);
    for (i, &v) in etas_main.iter().enumerate() {
        et.push(vec![Cell::from(i as i64), Cell::from(v)]);
    }
    et.write(&out_dir.join("eta.csv")).map_err(io_err)?;

    let mut ht = Table::new(["bin_lo", "bin_hi", "count"]);
    for (lo, hi, count) in histogram(&etas_main, 64) {
        ht.push(vec![Cell::from(lo), Cell::from(hi), Cell::from(count as i64)]);
    }
    ht.write(&out_dir.join("hist.csv")).map_err(io_err)?;

    let stabilization = stabilization_change(&rep.variance_curve);
    summary.set("n", rep.n);
    summary.set("replicas", rep.replicas);
    summary.set("mean", rep.mean);
    summary.set("variance", rep.variance);
    summary.set("ks", rep.ks);
    summary.set("ks_threshold", e.ks_threshold);
    summary.set("ks_ok", rep.ks <= e.ks_threshold);
    summary.set("m_hat", g.m_hat);
    summary.set("centering_se", g.centering_se);
    summary.set("variance_curve", &rep.variance_curve);
    summary.set("variance_rel_change", stabilization);
    Ok(true)
}

/// Relative change between the last two points of the variance curve;
/// `None` when the curve is too short or the last value vanishes.
fn stabilization_change(curve: &[(u32, f64)]) -> Option<f64> {
    let [.., (_, prev), (_, last)] = curve else {
        return None;
    };
    (*last != 0.0).then(|| (last - prev).abs() / last.abs())
}

fn histogram(samples: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![(lo, hi, samples.len())];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in samples {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

fn cmd_mw(cfg: &RunConfig, out_dir: &Path, summary: &mut Summary) -> Result<bool, RunError> {
    let (model, _) = certified_second_moment(cfg)?;
    let e = &cfg.experiment;
    let st = stationary_estimate(
        &model,
        e.burn_in,
        e.samples,
        &RngStream::new(cfg.seed, stream::MW_REFERENCE),
    )
    .map_err(cfg_err)?;
    let g = center_g(RawObservable::clamp_at_median(&st.measure), &st.measure);
    let series = mw_summands(
        &model,
        &g,
        &st.measure,
        e.mw_n_max,
        e.inner_replicas,
        e.outer_points,
        &RngStream::new(cfg.seed, stream::MW_SERIES),
    )
    .map_err(climit_err)?;

    let mut table = Table::new(["n", "s_n"]);
    for &(n, s) in &series.rows {
        table.push(vec![Cell::from(i64::from(n)), Cell::from(s)]);
    }
    table.write(&out_dir.join("mw.csv")).map_err(io_err)?;

    // Boundedness check on the un-normalized partial sums T_n = s_n·n^{3/2}.
    let t: Vec<(u32, f64)> = series
        .rows
        .iter()
        .map(|&(n, s)| (n, s * (n as f64).powf(1.5)))
        .collect();
    let max_t = t.iter().map(|&(_, v)| v).fold(0.0_f64, f64::max);
    let t_at_8 = t.iter().find(|&&(n, _)| n == 8).map(|&(_, v)| v);
    let ratio = t_at_8.and_then(|t8| (t8 > 0.0).then(|| max_t / t8));

    summary.set("n_max", e.mw_n_max);
    summary.set("inner_replicas", series.inner_replicas);
    summary.set("outer_points", series.outer_points);
    summary.set("se_warning", series.se_warning);
    summary.set("sum_s", series.rows.iter().map(|&(_, s)| s).sum::<f64>());
    summary.set("max_t", max_t);
    summary.set("t_at_8", t_at_8);
    summary.set("max_over_t8", ratio);
    summary.set("bounded_within_2x", ratio.map(|r| r <= 2.0));
    Ok(true)
}
