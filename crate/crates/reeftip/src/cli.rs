//! Command-line front end.

use crate::experiments::{
    centre_grid, resurgence_experiment, run_tipping_experiment, singular_limit_check, sweep_regime_map,
    ExperimentConfig, ExperimentError, SweepMode, SweepSpec,
};
use crate::folded::{critical_rate, region_classify_with, FoldedError};
use crate::integrate::{EventRecord, IntegratorConfig, Trajectory};
use crate::manifold::{coexistence_h, threshold_set, ManifoldError};
use crate::model::{AlphaMaxRule, ModelError, ModelParams, RampConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "reeftip", version, about = "Rate-induced tipping in a coral reef fast-slow model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Thresholds and regime of the frozen system.
    Analyze(Flags),
    /// Folded singularity region at rate r.
    Classify(Flags),
    /// Ramped run from the coexistence state.
    Simulate(Flags),
    /// Regime map over a (beta, lambda) grid.
    Sweep(Flags),
    /// Critical rate of the focus-node transition.
    Rcrit(Flags),
    /// Tip, reset alpha below d, and follow the recovery.
    Resurgence(Flags),
    /// Full versus reduced flow for decreasing epsilon.
    LimitCheck(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RuleArg {
    Min,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Classify,
    Simulate,
}

/// Flat settings shared by every subcommand; also the JSON config schema.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    /// Flat JSON file with any of these settings; flags win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Write the merged settings to this JSON file.
    #[arg(long)]
    #[serde(skip)]
    pub save_config: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Explicit upper clamp for alpha; overrides the rule.
    #[arg(long)]
    pub alpha_max: Option<f64>,
    #[arg(long, value_enum)]
    pub alpha_max_rule: Option<RuleArg>,
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long)]
    pub atol: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub tube_c: Option<f64>,
    #[arg(long)]
    pub dwell_threshold: Option<f64>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Worker threads for sweeps; defaults to REEFTIP_JOBS.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub reset_alpha: Option<f64>,
    /// Fixed alpha for the limit check.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tau_end: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; events go to a `.events.json` sidecar.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Flags {
    fn merged_over(self, file: Flags) -> Flags {
        macro_rules! pick {
            ($($f:ident),*) => { Flags { config: self.config, save_config: self.save_config, $($f: self.$f.or(file.$f)),* } };
        }
        pick!(
            beta, lambda, d, eps, r, delta, alpha_max, alpha_max_rule, rtol, atol, max_steps, tube_c,
            dwell_threshold, grid, mode, jobs, reset_alpha, alpha, tau_end, seed, out
        )
    }
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ManifoldError> for CliError {
    fn from(e: ManifoldError) -> Self {
        match e {
            ManifoldError::Precondition(m) => CliError::Validation(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<FoldedError> for CliError {
    fn from(e: FoldedError) -> Self {
        match e {
            FoldedError::Precondition(_) | FoldedError::ScreenFailed(_) => CliError::Validation(e.to_string()),
            FoldedError::Manifold(m) => m.into(),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Precondition(_) => CliError::Validation(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

struct Resolved {
    flags: Flags,
    params: ModelParams,
    integrator: IntegratorConfig,
    experiment: ExperimentConfig,
}

fn need(v: Option<f64>, name: &str) -> Result<f64, CliError> {
    v.ok_or_else(|| CliError::Validation(format!("missing --{name}")))
}

fn resolve(flags: Flags) -> Result<Resolved, CliError> {
    let file = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<Flags>(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        }
        None => Flags::default(),
    };
    let flags = flags.merged_over(file);
    if let Some(path) = &flags.save_config {
        let text = serde_json::to_string_pretty(&flags).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    let params = ModelParams::new(
        flags.lambda.unwrap_or(f64::NAN),
        flags.beta.unwrap_or(f64::NAN),
        flags.d.unwrap_or(0.22),
        flags.eps.unwrap_or(0.01),
    );
    let integrator = IntegratorConfig {
        rtol: flags.rtol.unwrap_or(1e-8),
        atol: flags.atol.unwrap_or(1e-10),
        max_steps: flags.max_steps.unwrap_or(IntegratorConfig::default().max_steps),
        ..Default::default()
    };
    integrator.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let experiment = ExperimentConfig {
        integrator,
        tube_c: flags.tube_c.unwrap_or(1.0),
        dwell_threshold: flags.dwell_threshold.unwrap_or(0.1),
        ..Default::default()
    };
    Ok(Resolved { flags, params, integrator, experiment })
}

fn checked_params(r: &Resolved) -> Result<ModelParams, CliError> {
    need(r.flags.beta, "beta")?;
    need(r.flags.lambda, "lambda")?;
    for w in r.params.validate()? {
        eprintln!("warning: {w:?}");
    }
    Ok(r.params)
}

fn ramp_of(r: &Resolved, p: &ModelParams, rate: f64) -> Result<RampConfig, CliError> {
    let rule = match (r.flags.alpha_max, r.flags.alpha_max_rule) {
        (Some(a), _) => AlphaMaxRule::Explicit(a),
        (None, Some(RuleArg::Plus)) => AlphaMaxRule::Plus,
        _ => AlphaMaxRule::MinPlusStar,
    };
    Ok(RampConfig::new(p, rate, r.flags.delta.unwrap_or(0.01), rule)?)
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV rows `t,tau,H,A,C,alpha` at every accepted step.
pub fn trajectory_csv(traj: &Trajectory<4>) -> String {
    let mut s = String::from("t,tau,H,A,C,alpha\n");
    for (t, y) in traj.t.iter().zip(&traj.y) {
        let _ = writeln!(s, "{},{},{},{},{},{}", fmt(*t), fmt(t * traj.tau_per_t), fmt(y[0]), fmt(y[1]), fmt(y[2]), fmt(y[3]));
    }
    s
}

pub fn events_json(events: &[EventRecord<4>], tau_per_t: f64) -> serde_json::Value {
    serde_json::Value::Array(
        events
            .iter()
            .map(|e| json!({ "kind": e.kind, "t": e.t, "tau": e.t * tau_per_t, "state": e.y }))
            .collect(),
    )
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".events.json");
    PathBuf::from(s)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_trajectory(path: &Path, traj: &Trajectory<4>) -> Result<(), CliError> {
    write(path, &trajectory_csv(traj))?;
    let ev = serde_json::to_string_pretty(&events_json(&traj.events, traj.tau_per_t)).map_err(|e| CliError::Io(e.to_string()))?;
    write(&sidecar(path), &ev)
}

fn emit_json(value: &serde_json::Value, out: Option<&PathBuf>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    if let Some(path) = out {
        write(path, &text)?;
    }
    println!("{text}");
    Ok(())
}

fn analyze(r: &Resolved) -> Result<(), CliError> {
    let p = checked_params(r)?;
    let t = threshold_set(&p)?;
    let v = json!({
        "beta": p.beta, "lambda": p.lambda, "d": p.d,
        "H_I": coexistence_h(&p),
        "alpha_plus": t.alpha_plus,
        "alpha_star": t.alpha_star,
        "alpha_hat": t.alpha_hat,
        "H_hat": t.h_hat,
        "regime": format!("{:?}", t.ordering),
    });
    emit_json(&v, r.flags.out.as_ref())
}

fn classify(r: &Resolved) -> Result<(), CliError> {
    let p = checked_params(r)?;
    let rate = need(r.flags.r, "r")?;
    let label = region_classify_with(&p, rate, r.flags.delta.unwrap_or(0.01))?;
    let v = serde_json::to_value(label).map_err(|e| CliError::Io(e.to_string()))?;
    emit_json(&v, r.flags.out.as_ref())
}

fn simulate(r: &Resolved) -> Result<(), CliError> {
    let p = checked_params(r)?;
    let ramp = ramp_of(r, &p, need(r.flags.r, "r")?)?;
    let (traj, outcome) = run_tipping_experiment(&p, &ramp, &r.experiment)?;
    let out = r.flags.out.clone().unwrap_or_else(|| PathBuf::from("trajectory.csv"));
    write_trajectory(&out, &traj)?;
    println!(
        "outcome {} tip_alpha {} dwell {:.4} oscillations {} -> {}",
        outcome.label.as_str(),
        outcome.tip_alpha.map_or("none".into(), fmt),
        outcome.dwell,
        outcome.oscillations,
        out.display()
    );
    Ok(())
}

fn sweep(r: &Resolved) -> Result<(), CliError> {
    let n = r.flags.grid.unwrap_or(match r.flags.mode {
        Some(ModeArg::Simulate) => 50,
        _ => 200,
    });
    if n == 0 {
        return Err(CliError::Validation("--grid must be positive".into()));
    }
    let jobs = r
        .flags
        .jobs
        .or_else(|| std::env::var("REEFTIP_JOBS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    let g = centre_grid(n);
    let spec = SweepSpec {
        betas: g.clone(),
        lambdas: g,
        d: r.params.d,
        r: need(r.flags.r, "r")?,
        epsilon: r.params.epsilon,
        delta: r.flags.delta.unwrap_or(0.01),
        mode: match r.flags.mode {
            Some(ModeArg::Simulate) => SweepMode::Simulate,
            _ => SweepMode::ClassifyOnly,
        },
        jobs,
    };
    let res = sweep_regime_map(&spec, &r.experiment)?;
    let mut s = String::from("beta,lambda,region,outcome,alpha_FS,mu\n");
    for c in &res.cells {
        let region = if c.excluded { "excluded" } else { c.region.map_or("error", |l| l.region.as_str()) };
        let outcome = c.outcome.map_or(if spec.mode == SweepMode::Simulate { "error" } else { "" }, |o| o.as_str());
        let afs = c.region.map_or(String::new(), |l| fmt(l.alpha_fs));
        let mu = c.region.and_then(|l| l.mu).map_or(String::new(), fmt);
        let _ = writeln!(s, "{},{},{region},{outcome},{afs},{mu}", fmt(c.beta), fmt(c.lambda));
    }
    let out = r.flags.out.clone().unwrap_or_else(|| PathBuf::from("sweep.csv"));
    write(&out, &s)?;
    let excluded = res.cells.iter().filter(|c| c.excluded).count();
    println!("sweep {n}x{n} r {} excluded {excluded} -> {}", spec.r, out.display());
    Ok(())
}

fn rcrit(r: &Resolved) -> Result<(), CliError> {
    let p = checked_params(r)?;
    let rc = critical_rate(&p)?;
    println!("r_crit {}", fmt(rc));
    if let Some(path) = &r.flags.out {
        write(path, &format!("{}\n", fmt(rc)))?;
    }
    Ok(())
}

fn resurgence(r: &Resolved) -> Result<(), CliError> {
    let p = checked_params(r)?;
    let ramp = ramp_of(r, &p, need(r.flags.r, "r")?)?;
    let reset = need(r.flags.reset_alpha, "reset-alpha")?;
    let res = resurgence_experiment(&p, &ramp, reset, &r.experiment)?;
    let out = r.flags.out.clone().unwrap_or_else(|| PathBuf::from("resurgence.csv"));
    write_trajectory(&out, &res.trajectory)?;
    println!(
        "reset at tau {} with H {} ; distance to e_I {} -> {}",
        fmt(res.reset_tau),
        fmt(res.h_at_reset),
        fmt(res.endpoint_distance),
        out.display()
    );
    Ok(())
}

fn limit_check(r: &Resolved) -> Result<(), CliError> {
    let p = checked_params(r)?;
    let alpha = need(r.flags.alpha, "alpha")?;
    let rows = singular_limit_check(&p, alpha, &[1e-2, 5e-3, 2.5e-3], r.flags.tau_end.unwrap_or(20.0), &r.integrator)?;
    let v = serde_json::to_value(rows).map_err(|e| CliError::Io(e.to_string()))?;
    emit_json(&v, r.flags.out.as_ref())
}

/// Parses `argv` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let (flags, f): (Flags, fn(&Resolved) -> Result<(), CliError>) = match cli.command {
        Command::Analyze(x) => (x, analyze),
        Command::Classify(x) => (x, classify),
        Command::Simulate(x) => (x, simulate),
        Command::Sweep(x) => (x, sweep),
        Command::Rcrit(x) => (x, rcrit),
        Command::Resurgence(x) => (x, resurgence),
        Command::LimitCheck(x) => (x, limit_check),
    };
    match resolve(flags).and_then(|r| f(&r)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let msg = match &e {
                CliError::Validation(m) | CliError::Numeric(m) | CliError::Io(m) => m,
            };
            eprintln!("error: {msg}");
            e.code()
        }
    }
}
