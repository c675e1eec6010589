//! Command-line front end: maps configs to experiments and emits CSV plus a
//! JSON run manifest.
//!
//! Exit codes: 0 success (the manifest records per-check pass/fail), 1 for
//! validation/input problems, 2 for numerical failures, 64 for usage errors.
//! CSV output is deterministic for a fixed config and seed: metadata lines
//! carry no timestamps, summation orders are fixed, and randomized sweeps
//! draw from a seeded generator.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Once;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::analysis::{
    energy_dissipation_report, fit_decay, lp_norm, profile_error, DecayReport,
};
use crate::config::{build_grid, load_config, ProblemConfig};
use crate::inequalities::{
    interpolation_seminorm_check, large_time_probe, measure_density_integral, nash_ratio,
    rescaled_operator_bound_check, sample_bump, small_time_probe, ExteriorDomain, ProbeCase,
};
use crate::integrator::{delta_initial, evolve, Trajectory};
use crate::kernel::{effective_diffusivity, kernel_table, kernel_value_direct, windowed_mass};
use crate::operator::assemble;
use crate::{Error, Result};

/// Default solver tolerance for experiment evolutions.
const SOLVER_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Simulate,
    Decay,
    Profile,
    Inequalities,
    Probes,
    Kernel,
}

impl ExperimentKind {
    fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Decay => "decay",
            ExperimentKind::Profile => "profile",
            ExperimentKind::Inequalities => "inequalities",
            ExperimentKind::Probes => "probes",
            ExperimentKind::Kernel => "kernel",
        }
    }
}

/// One fully resolved experiment invocation.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub command: ExperimentKind,
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
}

#[derive(Parser)]
#[command(
    name = "fracflow",
    version,
    about = "Coupled nonlocal diffusion laboratory: simulate, fit decay rates, \
             compare asymptotic profiles, and verify the supporting inequalities"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
    /// Path to the JSON problem configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Repeatable key=value override applied to the configuration.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
    /// Seed for randomized sweeps (overrides the config seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Evolve the gradient flow and export trajectory diagnostics.
    Simulate,
    /// Evolve and fit the decay exponents over the configured windows.
    Decay,
    /// Evolve and measure the weighted distance to the limiting profile.
    Profile,
    /// Run the inequality sweeps (Nash quotient, measure density,
    /// interpolation claim).
    Inequalities,
    /// Run the concentration, far-field, and cutoff-bound probes.
    Probes,
    /// Evaluate the fractional heat kernel on the configured grid.
    Kernel,
}

static THREAD_POOL: Once = Once::new();

fn init_threads() {
    THREAD_POOL.call_once(|| {
        if let Ok(v) = std::env::var("FRACFLOW_THREADS") {
            if let Ok(n) = v.parse::<usize>() {
                if n > 0 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}

/// Entry point used by the binary and by tests. Returns the process exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_threads();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return code;
        }
    };
    let command = match cli.command {
        CliCommand::Simulate => ExperimentKind::Simulate,
        CliCommand::Decay => ExperimentKind::Decay,
        CliCommand::Profile => ExperimentKind::Profile,
        CliCommand::Inequalities => ExperimentKind::Inequalities,
        CliCommand::Probes => ExperimentKind::Probes,
        CliCommand::Kernel => ExperimentKind::Kernel,
    };
    let Some(config_path) = cli.config else {
        eprintln!("error: --config <PATH> is required");
        return 64;
    };
    let spec = ExperimentSpec {
        command,
        config_path,
        out_dir: cli.out,
        overrides: cli.overrides,
        seed: cli.seed,
    };
    match execute(&spec) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

/// Format with 17 significant digits so CSV round-trips losslessly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

struct OutputRecord {
    path: String,
    sha256: String,
    bytes: usize,
}

struct CheckResult {
    name: String,
    pass: Option<bool>,
    value: f64,
    detail: String,
}

struct RunContext {
    out_dir: PathBuf,
    config: ProblemConfig,
    config_hash: String,
    seed: u64,
    outputs: Vec<OutputRecord>,
    checks: Vec<CheckResult>,
    timings_ms: Vec<(String, u128)>,
}

impl RunContext {
    fn meta_lines(&self, extra: &[String]) -> Vec<String> {
        let mut lines = vec![
            format!("config_sha256={}", self.config_hash),
            format!("seed={}", self.seed),
        ];
        lines.extend_from_slice(extra);
        lines
    }

    fn write_csv(
        &mut self,
        name: &str,
        extra_meta: &[String],
        header: &str,
        rows: impl IntoIterator<Item = String>,
    ) -> Result<()> {
        let mut text = String::new();
        for line in self.meta_lines(extra_meta) {
            let _ = writeln!(text, "# {line}");
        }
        let _ = writeln!(text, "{header}");
        for row in rows {
            let _ = writeln!(text, "{row}");
        }
        let path = self.out_dir.join(name);
        std::fs::write(&path, text.as_bytes())?;
        self.outputs.push(OutputRecord {
            path: name.to_string(),
            sha256: sha256_hex(text.as_bytes()),
            bytes: text.len(),
        });
        Ok(())
    }

    fn register_file(&mut self, name: &str) -> Result<()> {
        let bytes = std::fs::read(self.out_dir.join(name))?;
        self.outputs.push(OutputRecord {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn check(&mut self, name: &str, pass: bool, value: f64, detail: String) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            pass: Some(pass),
            value,
            detail,
        });
    }

    fn note(&mut self, name: &str, value: f64, detail: String) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            pass: None,
            value,
            detail,
        });
    }

    fn timed<T>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = std::time::Instant::now();
        let out = f(self);
        self.timings_ms
            .push((label.to_string(), t0.elapsed().as_millis()));
        out
    }
}

fn apply_overrides(text: &str, overrides: &[String]) -> Result<String> {
    if overrides.is_empty() {
        return Ok(text.to_string());
    }
    let mut value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::Parse(format!("config JSON: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Parse("config root must be a JSON object".into()))?;
    for item in overrides {
        let Some((key, raw)) = item.split_once('=') else {
            return Err(Error::Validation(format!(
                "override '{item}' is not of the form key=value"
            )));
        };
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        obj.insert(key.to_string(), parsed);
    }
    Ok(value.to_string())
}

/// Execute one experiment end to end, writing its artifacts and manifest.
pub fn execute(spec: &ExperimentSpec) -> Result<()> {
    init_threads();
    let raw = std::fs::read_to_string(&spec.config_path).map_err(|e| {
        Error::Validation(format!(
            "cannot read config {}: {e}",
            spec.config_path.display()
        ))
    })?;
    let resolved = apply_overrides(&raw, &spec.overrides)?;
    let config = load_config(&resolved)?;
    let canonical = serde_json::to_string(&config).expect("config serializes");
    std::fs::create_dir_all(&spec.out_dir)?;
    let seed = spec.seed.or(config.seed).unwrap_or(0);
    let mut ctx = RunContext {
        out_dir: spec.out_dir.clone(),
        config_hash: sha256_hex(canonical.as_bytes()),
        config,
        seed,
        outputs: Vec::new(),
        checks: Vec::new(),
        timings_ms: Vec::new(),
    };

    let result = match spec.command {
        ExperimentKind::Simulate => run_simulate(&mut ctx),
        ExperimentKind::Decay => run_decay(&mut ctx),
        ExperimentKind::Profile => run_profile(&mut ctx),
        ExperimentKind::Inequalities => run_inequalities(&mut ctx),
        ExperimentKind::Probes => run_probes(&mut ctx),
        ExperimentKind::Kernel => run_kernel(&mut ctx),
    };
    result?;

    let manifest = serde_json::json!({
        "command": spec.command.name(),
        "crate_version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::from_str::<serde_json::Value>(&canonical).unwrap(),
        "config_sha256": ctx.config_hash,
        "seed": ctx.seed,
        "timings_ms": ctx.timings_ms.iter().map(|(k, v)| {
            serde_json::json!({"phase": k, "ms": v})
        }).collect::<Vec<_>>(),
        "checks": ctx.checks.iter().map(|c| serde_json::json!({
            "name": c.name,
            "pass": c.pass,
            "value": c.value,
            "detail": c.detail,
        })).collect::<Vec<_>>(),
        "outputs": ctx.outputs.iter().map(|o| serde_json::json!({
            "path": o.path,
            "sha256": o.sha256,
            "bytes": o.bytes,
        })).collect::<Vec<_>>(),
    });
    std::fs::write(
        spec.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )?;
    Ok(())
}

fn geometric_schedule(t_first: f64, t_last: f64, count: usize) -> Vec<f64> {
    let ratio = (t_last / t_first).powf(1.0 / (count as f64 - 1.0));
    (0..count)
        .map(|k| t_first * ratio.powi(k as i32))
        .collect()
}

fn default_schedule(config: &ProblemConfig) -> Vec<f64> {
    if let Some(times) = &config.snapshot_times {
        return times.clone();
    }
    let t_end = config.t_end.unwrap_or(10.0);
    let raw = geometric_schedule(t_end / 100.0, t_end, 9);
    // a configured dt caps the schedule density
    let Some(dt) = config.dt else { return raw };
    let mut pruned: Vec<f64> = Vec::new();
    for t in raw {
        if t >= dt * (1.0 - 1e-12)
            && pruned.last().map(|&p| t - p >= dt * (1.0 - 1e-12)).unwrap_or(true)
        {
            pruned.push(t);
        }
    }
    match pruned.last_mut() {
        Some(last) if t_end - *last < 0.5 * dt => *last = t_end,
        _ => pruned.push(t_end),
    }
    pruned
}

fn dt_for_schedule(config: &ProblemConfig, schedule: &[f64]) -> f64 {
    if let Some(dt) = config.dt {
        return dt;
    }
    let mut min_gap = schedule[0];
    for w in schedule.windows(2) {
        min_gap = min_gap.min(w[1] - w[0]);
    }
    (schedule[0] / 20.0).min(min_gap / 2.0)
}

fn trajectory_csv(ctx: &mut RunContext, name: &str, traj: &Trajectory) -> Result<()> {
    let rows = traj.steps.iter().map(|s| {
        format!(
            "{},{},{},{},{},{}",
            fmt_f64(s.t),
            fmt_f64(s.mass),
            fmt_f64(s.l1),
            fmt_f64(s.l2),
            fmt_f64(s.linf),
            fmt_f64(s.energy)
        )
    });
    let rows: Vec<String> = rows.collect();
    ctx.write_csv(name, &[], "t,mass,l1,l2,linf,energy", rows)
}

fn snapshot_csvs(ctx: &mut RunContext, traj: &Trajectory) -> Result<()> {
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let name = format!("snapshot_{k:03}.csv");
        let meta = vec![format!("t={}", fmt_f64(traj.times[k]))];
        let rows: Vec<String> = traj
            .grid
            .cell_centers
            .iter()
            .zip(snap)
            .map(|(x, u)| format!("{},{}", fmt_f64(*x), fmt_f64(*u)))
            .collect();
        ctx.write_csv(&name, &meta, "x,u", rows)?;
    }
    Ok(())
}

fn run_simulate(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config.clone();
    let grid = build_grid(&config)?;
    let op = ctx.timed("assemble", |_| assemble(&grid, &config))?;
    if config.dump_matrix.unwrap_or(false) {
        op.dump(&ctx.out_dir.join("matrix.bin"), &ctx.out_dir.join("matrix.json"))?;
        ctx.register_file("matrix.bin")?;
        ctx.register_file("matrix.json")?;
    }
    let schedule = default_schedule(&config);
    let dt = dt_for_schedule(&config, &schedule);
    let u0 = delta_initial(&grid);
    let traj = ctx.timed("evolve", |_| evolve(&op, &u0, &schedule, dt, SOLVER_TOL))?;

    trajectory_csv(ctx, "trajectory.csv", &traj)?;
    snapshot_csvs(ctx, &traj)?;

    let mass0 = traj.steps[0].mass;
    let drift = traj
        .steps
        .iter()
        .map(|s| (s.mass - mass0).abs())
        .fold(0.0f64, f64::max)
        / mass0.abs();
    ctx.check("mass_drift", drift <= 1e-9, drift, "max relative mass drift".into());
    let monotone = traj.steps.windows(2).all(|w| {
        w[1].l1 <= w[0].l1 * (1.0 + 1e-12)
            && w[1].l2 <= w[0].l2 * (1.0 + 1e-12)
            && w[1].linf <= w[0].linf * (1.0 + 1e-12)
    });
    ctx.check(
        "norms_nonincreasing",
        monotone,
        if monotone { 1.0 } else { 0.0 },
        "L1, L2, Linf nonincreasing along the flow".into(),
    );
    let rows = energy_dissipation_report(&traj);
    let all_pass = rows.iter().all(|r| r.pass);
    ctx.check(
        "energy_dissipation_bound",
        all_pass,
        rows.iter().map(|r| r.energy_form).fold(0.0, f64::max),
        "form value within ||u0||^2/(2t) at every snapshot".into(),
    );
    Ok(())
}

/// Evolve for a decay fit. Schedules spanning more than a factor 40 are run
/// in two phases with phase-matched step sizes so early snapshots stay
/// accurate without making late ones unaffordable.
pub fn decay_trajectories(
    config: &ProblemConfig,
    schedule: &[f64],
) -> Result<Vec<Trajectory>> {
    let grid = build_grid(config)?;
    let op = assemble(&grid, config)?;
    let u0 = delta_initial(&grid);
    let span = schedule.last().unwrap() / schedule[0];
    let phases: Vec<Vec<f64>> = if span > 40.0 {
        let split = (schedule[0] * schedule.last().unwrap()).sqrt();
        let a: Vec<f64> = schedule.iter().cloned().filter(|&t| t <= split).collect();
        let b: Vec<f64> = schedule.iter().cloned().filter(|&t| t > split).collect();
        vec![a, b]
    } else {
        vec![schedule.to_vec()]
    };
    let mut out = Vec::new();
    for phase in phases.into_iter().filter(|p| !p.is_empty()) {
        let mut min_gap = phase[0];
        for w in phase.windows(2) {
            min_gap = min_gap.min(w[1] - w[0]);
        }
        let dt = config.dt.unwrap_or((phase[0] / 20.0).min(min_gap / 2.0));
        out.push(evolve(&op, &u0, &phase, dt, SOLVER_TOL)?);
    }
    Ok(out)
}

/// Fit one window against the snapshots pooled from all phases.
pub fn fit_window(
    trajectories: &[Trajectory],
    config: &ProblemConfig,
    p: f64,
    window: (f64, f64),
) -> Result<DecayReport> {
    if trajectories.len() == 1 {
        return fit_decay(&trajectories[0], config, p, window);
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for traj in trajectories {
        for (k, &t) in traj.times.iter().enumerate() {
            if t >= window.0 * (1.0 - 1e-12) && t <= window.1 * (1.0 + 1e-12) {
                let norm = lp_norm(&traj.snapshots[k], p, &traj.grid)?;
                if !(norm > 0.0) {
                    return Err(Error::DegenerateInput(format!(
                        "norm vanishes at t = {t}; log fit undefined"
                    )));
                }
                xs.push(t.ln());
                ys.push(norm.ln());
            }
        }
    }
    if xs.len() < 6 {
        return Err(Error::InsufficientData(format!(
            "decay fit needs at least 6 snapshots in the window; found {}",
            xs.len()
        )));
    }
    let (slope, intercept, rms) = crate::analysis::fit_line(&xs, &ys)?;
    let nd = config.dimension_f64();
    let fac = if p.is_infinite() { 1.0 } else { 1.0 - 1.0 / p };
    Ok(DecayReport {
        p,
        window,
        slope,
        intercept,
        residual_rms: rms,
        n_snapshots: xs.len(),
        predicted_slope_large_time: -(nd / (2.0 * config.r)) * fac,
        predicted_slope_small_time: -(nd / (2.0 * config.r.min(config.s))) * fac,
    })
}

fn run_decay(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config.clone();
    let t_end = config.t_end.unwrap_or(100.0);
    let schedule = config
        .snapshot_times
        .clone()
        .unwrap_or_else(|| geometric_schedule(0.01, t_end, 24));
    let trajectories = ctx.timed("evolve", |_| decay_trajectories(&config, &schedule))?;

    let mut norm_rows = Vec::new();
    for traj in &trajectories {
        for (k, &t) in traj.times.iter().enumerate() {
            let u = &traj.snapshots[k];
            norm_rows.push(format!(
                "{},{},{},{}",
                fmt_f64(t),
                fmt_f64(lp_norm(u, 1.0, &traj.grid)?),
                fmt_f64(lp_norm(u, 2.0, &traj.grid)?),
                fmt_f64(lp_norm(u, f64::INFINITY, &traj.grid)?)
            ));
        }
    }
    ctx.write_csv("decay_norms.csv", &[], "t,l1,l2,linf", norm_rows)?;

    // fit every window the schedule covers; defaults are the two regime
    // windows of the experiment design
    let windows = [(0.01f64, 0.5f64), (10.0, t_end)];
    let mut fit_rows = Vec::new();
    for (label, window) in ["early", "late"].iter().zip(windows) {
        if window.0 < schedule[0] * (1.0 - 1e-9)
            || window.1 > schedule.last().unwrap() * (1.0 + 1e-9)
        {
            continue;
        }
        match fit_window(&trajectories, &config, f64::INFINITY, window) {
            Ok(rep) => {
                let predicted = if *label == "early" {
                    rep.predicted_slope_small_time
                } else {
                    rep.predicted_slope_large_time
                };
                ctx.note(
                    &format!("{label}_window_slope"),
                    rep.slope,
                    format!("predicted {predicted}"),
                );
                fit_rows.push(format!(
                    "{label},{},{},{},{},{}",
                    fmt_f64(window.0),
                    fmt_f64(window.1),
                    fmt_f64(rep.slope),
                    fmt_f64(predicted),
                    fmt_f64(rep.residual_rms)
                ));
            }
            Err(Error::InsufficientData(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    ctx.write_csv(
        "decay_fits.csv",
        &[],
        "window,t_min,t_max,slope,predicted,residual_rms",
        fit_rows,
    )?;
    Ok(())
}

fn run_profile(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config.clone();
    if !config.profile_hypothesis() {
        return Err(Error::Hypothesis(format!(
            "asymptotic profile requires r < N/2 + c; got r = {}, N/2 + c = {}",
            config.r,
            config.dimension_f64() / 2.0 + config.c
        )));
    }
    let grid = build_grid(&config)?;
    let op = ctx.timed("assemble", |_| assemble(&grid, &config))?;
    let schedule = config
        .snapshot_times
        .clone()
        .unwrap_or_else(|| vec![25.0, 50.0, 100.0]);
    let dt = dt_for_schedule(&config, &schedule);
    let u0 = delta_initial(&grid);
    let mass = grid.cell_width * u0.iter().sum::<f64>();
    let traj = ctx.timed("evolve", |_| evolve(&op, &u0, &schedule, dt, SOLVER_TOL))?;

    // far-field diffusivity of the assembled operator relates the flow to
    // the closed-form profile
    let c_eff = config.alpha_r * effective_diffusivity(config.r)?;
    ctx.note("effective_diffusivity", c_eff, "alpha_r * D(r)".into());

    let mut rows = Vec::new();
    let mut errs_p1 = Vec::new();
    let mut errs_p2 = Vec::new();
    for &t in &schedule {
        let e1 = profile_error(&traj, &config, t, 1.0, mass, c_eff)?;
        let e2 = profile_error(&traj, &config, t, 2.0, mass, c_eff)?;
        errs_p1.push(e1);
        errs_p2.push(e2);
        rows.push(format!(
            "{},{},{}",
            fmt_f64(t),
            fmt_f64(e1),
            fmt_f64(e2)
        ));
    }
    ctx.write_csv(
        "profile_error.csv",
        &[format!("c_eff={}", fmt_f64(c_eff))],
        "t,weighted_error_p1,weighted_error_p2",
        rows,
    )?;
    let dec1 = errs_p1.windows(2).all(|w| w[1] < w[0]);
    let dec2 = errs_p2.windows(2).all(|w| w[1] < w[0]);
    let last = *errs_p1.last().unwrap();
    ctx.check("profile_p1_decreasing", dec1, last, "p=1 weighted errors decrease".into());
    ctx.check(
        "profile_p1_small",
        last <= 0.05 * mass,
        last,
        format!("final p=1 error vs 0.05 * M = {}", 0.05 * mass),
    );
    ctx.check(
        "profile_p2_decreasing",
        dec2,
        *errs_p2.last().unwrap(),
        "p=2 weighted errors decrease".into(),
    );
    Ok(())
}

/// Deterministic bump parameters for the seeded sweeps.
pub struct BumpDraw {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

pub fn draw_exterior_bumps(
    config: &ProblemConfig,
    seed: u64,
    count: usize,
    min_width: f64,
    max_width: f64,
) -> Vec<BumpDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = config.inner_radius;
    let hi = config.truncation_radius;
    (0..count)
        .map(|_| {
            let width = rng.random_range(min_width..max_width);
            let margin = 1.05 * width;
            let center = rng.random_range(lo + margin..hi - margin);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let amplitude = side * rng.random_range(0.5..2.0);
            BumpDraw {
                center,
                width,
                amplitude,
            }
        })
        .collect()
}

fn run_inequalities(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config.clone();
    let grid = build_grid(&config)?;
    let mut refined = config.clone();
    refined.n_cells *= 2;
    let grid_fine = build_grid(&refined)?;

    // Nash quotient sweep on seeded exterior bumps, repeated on the
    // half-width grid to measure drift of the extreme ratio.
    let draws = draw_exterior_bumps(&config, ctx.seed, 200, 0.3, 1.2);
    let mut rows = Vec::new();
    let (mut max_coarse, mut max_fine) = (0.0f64, 0.0f64);
    for (k, d) in draws.iter().enumerate() {
        let f: Vec<f64> = grid
            .cell_centers
            .iter()
            .map(|&x| d.amplitude * crate::inequalities::bump((x - d.center) / d.width))
            .collect();
        let ratio = nash_ratio(&f, config.r, &grid)?;
        let f_fine: Vec<f64> = grid_fine
            .cell_centers
            .iter()
            .map(|&x| d.amplitude * crate::inequalities::bump((x - d.center) / d.width))
            .collect();
        let ratio_fine = nash_ratio(&f_fine, config.r, &grid_fine)?;
        max_coarse = max_coarse.max(ratio);
        max_fine = max_fine.max(ratio_fine);
        rows.push(format!(
            "{k},{},{},{},{}",
            fmt_f64(d.center),
            fmt_f64(d.width),
            fmt_f64(ratio),
            fmt_f64(ratio_fine)
        ));
    }
    ctx.write_csv(
        "nash_ratios.csv",
        &[],
        "id,center,width,ratio,ratio_refined",
        rows,
    )?;
    let drift = (max_fine - max_coarse).abs() / max_coarse;
    ctx.check(
        "nash_max_finite",
        max_coarse.is_finite(),
        max_coarse,
        "largest Nash quotient over the sweep".into(),
    );
    ctx.check(
        "nash_refinement_drift",
        drift <= 0.05,
        drift,
        "relative drift of the max under grid halving".into(),
    );

    // dilation invariance anchored at the exterior endpoint
    let mut dilation = Vec::new();
    for lam in [1.0f64, 2.0, 4.0] {
        let anchor = config.inner_radius;
        let f: Vec<f64> = grid
            .cell_centers
            .iter()
            .map(|&x| crate::inequalities::bump(((x - anchor) / lam + anchor - 2.0) / 0.6))
            .collect();
        dilation.push(nash_ratio(&f, config.r, &grid)?);
    }
    let dil_spread = dilation
        .iter()
        .map(|v| (v - dilation[0]).abs() / dilation[0])
        .fold(0.0f64, f64::max);
    ctx.check(
        "nash_dilation_invariance",
        dil_spread <= 1e-2,
        dil_spread,
        "quotient spread across anchored dilations 1,2,4".into(),
    );

    // measure-density sweep: one hand-checked instance on the single ray
    // (1, inf), plus seeded samples on the config's exterior domain
    let right_ray = ExteriorDomain {
        left_end: None,
        right_start: Some(1.0),
    };
    let exact = measure_density_integral(2.0, &[(1.5, 2.5)], 2.0, 0.5, &right_ray)?;
    ctx.check(
        "measure_density_exact_instance",
        (exact.integral - 3.0).abs() <= 1e-12,
        exact.integral,
        "integral for x=2, E=(1.5,2.5), p=2, s=0.5 on (1, inf)".into(),
    );
    let omega = ExteriorDomain {
        left_end: Some(-config.inner_radius),
        right_start: Some(config.inner_radius),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed.wrapping_add(1));
    let mut md_rows = Vec::new();
    let mut min_ratio = f64::INFINITY;
    for k in 0..500 {
        let width = 10f64.powf(rng.random_range(-2.0..1.0));
        let lo = rng.random_range(config.inner_radius..config.inner_radius + 40.0);
        let x = rng.random_range(lo..lo + width);
        let rep = measure_density_integral(x, &[(lo, lo + width)], 2.0, 0.5, &omega)?;
        if rep.ratio.is_finite() {
            min_ratio = min_ratio.min(rep.ratio);
        }
        md_rows.push(format!(
            "{k},{},{},{},{}",
            fmt_f64(x),
            fmt_f64(width),
            fmt_f64(rep.integral),
            fmt_f64(rep.ratio)
        ));
    }
    ctx.write_csv(
        "measure_density.csv",
        &[],
        "id,x,excluded_width,integral,ratio",
        md_rows,
    )?;
    ctx.check(
        "measure_density_floor",
        min_ratio > 0.0,
        min_ratio,
        "smallest ratio across the sweep".into(),
    );

    // interpolation claim sweep
    let mask = vec![true; grid.n()];
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed.wrapping_add(2));
    let mut ok = 0usize;
    let mut ip_rows = Vec::new();
    for k in 0..100 {
        let c = rng.random_range(-0.8 * config.truncation_radius..0.8 * config.truncation_radius);
        let w = rng.random_range(0.3..2.0);
        let v = sample_bump(&grid, c, w);
        let chk = interpolation_seminorm_check(&v, config.r, &grid, &mask)?;
        if chk.pass {
            ok += 1;
        }
        ip_rows.push(format!(
            "{k},{},{},{}",
            fmt_f64(chk.lhs_sq),
            fmt_f64(chk.rhs),
            chk.pass
        ));
    }
    ctx.write_csv("interpolation.csv", &[], "id,lhs_sq,rhs,pass", ip_rows)?;
    ctx.check(
        "interpolation_pass_rate",
        ok == 100,
        ok as f64 / 100.0,
        "fraction of samples satisfying the split bound".into(),
    );
    Ok(())
}

fn run_probes(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config.clone();
    let eps = [0.4, 0.2, 0.1, 0.05];

    // concentration probes need the smallest bump resolved by several cells
    let h = config.cell_width();
    if eps[eps.len() - 1] < 4.0 * h {
        ctx.note(
            "concentration_probes_skipped",
            h,
            format!(
                "cell width {h} cannot resolve the smallest bump scale {}; \
                 use n_cells >= {}",
                eps[eps.len() - 1],
                (8.0 * config.truncation_radius / eps[eps.len() - 1]).ceil()
            ),
        );
    } else {
        run_concentration_probes(ctx, &config, &eps)?;
    }

    run_far_field_probe(ctx, &config)?;
    run_cutoff_probe(ctx, &config)
}

fn run_concentration_probes(
    ctx: &mut RunContext,
    config: &ProblemConfig,
    eps: &[f64],
) -> Result<()> {
    let mut rows = Vec::new();
    for case in [ProbeCase::InnerCase, ProbeCase::ExteriorCase] {
        let probe = ctx.timed(
            if case == ProbeCase::InnerCase {
                "probe_inner"
            } else {
                "probe_exterior"
            },
            |_| small_time_probe(case, config, eps),
        )?;
        let label = match case {
            ProbeCase::InnerCase => "inner",
            ProbeCase::ExteriorCase => "exterior",
        };
        for (e, en) in &probe.energies {
            rows.push(format!("{label},{},{}", fmt_f64(*e), fmt_f64(*en)));
        }
        ctx.check(
            &format!("{label}_concentration_slope"),
            (probe.slope - probe.predicted).abs() <= 0.05,
            probe.slope,
            format!("predicted {}", probe.predicted),
        );
    }
    ctx.write_csv("probes_small.csv", &[], "case,eps,energy", rows)
}

fn run_far_field_probe(ctx: &mut RunContext, config: &ProblemConfig) -> Result<()> {
    let radii = [1.0, 2.0, 4.0];
    let centers: Vec<f64> = radii.iter().map(|r| 10.0 * r * r).collect();
    let lt_rows = ctx.timed("probe_far_field", |_| {
        large_time_probe(config, &centers, &radii)
    })?;
    let mut rows = Vec::new();
    let (mut e_min, mut e_max) = (f64::INFINITY, 0.0f64);
    let (mut c_min, mut c_max) = (f64::INFINITY, 0.0f64);
    for row in &lt_rows {
        e_min = e_min.min(row.energy_ratio);
        e_max = e_max.max(row.energy_ratio);
        c_min = c_min.min(row.cross_ratio);
        c_max = c_max.max(row.cross_ratio);
        rows.push(format!(
            "{},{},{},{},{},{}",
            fmt_f64(row.radius),
            fmt_f64(row.center),
            fmt_f64(row.energy),
            fmt_f64(row.cross_term),
            fmt_f64(row.energy_ratio),
            fmt_f64(row.cross_ratio)
        ));
    }
    ctx.write_csv(
        "probes_large.csv",
        &[],
        "radius,center,energy,cross_term,energy_ratio,cross_ratio",
        rows,
    )?;
    ctx.check(
        "far_field_energy_ratio_spread",
        (e_max - e_min) / e_max <= 0.25,
        (e_max - e_min) / e_max,
        "energy ratio variation across radii".into(),
    );
    ctx.check(
        "far_field_cross_ratio_bounded",
        c_max.is_finite() && c_max / c_min <= 10.0,
        c_max / c_min,
        "coupling-term ratio stays bounded".into(),
    );
    Ok(())
}

/// Cutoff bounds for the rescaled operator: one doubling in each of R and
/// lambda. Needs a window several times the doubled cutoff, otherwise
/// truncation distorts the scaling ratios.
fn run_cutoff_probe(ctx: &mut RunContext, config: &ProblemConfig) -> Result<()> {
    let (lam, r_cut, rho) = (2.0, 3.0, 1.0);
    if 8.0 * r_cut > config.truncation_radius {
        ctx.note(
            "psi_bounds_skipped",
            config.truncation_radius,
            format!(
                "window L = {} too small for cutoff doubling up to {}; use L >= {}",
                config.truncation_radius,
                2.0 * r_cut,
                8.0 * r_cut
            ),
        );
        return Ok(());
    }
    let mut psi_rows = Vec::new();
    let mut reports = Vec::new();
    for (l, rc) in [
        (lam, r_cut),
        (lam, 2.0 * r_cut),
        (2.0 * lam, r_cut),
        (2.0 * lam, 2.0 * r_cut),
    ] {
        let rep = ctx.timed("probe_cutoff", |_| {
            rescaled_operator_bound_check(config, l, rc, rho)
        })?;
        psi_rows.push(format!(
            "{},{},{},{},{},{},{},{},{}",
            fmt_f64(rep.lambda),
            fmt_f64(rep.r_cut),
            fmt_f64(rep.rho),
            fmt_f64(rep.max_inner),
            fmt_f64(rep.max_middle),
            fmt_f64(rep.max_outer),
            fmt_f64(rep.bound_inner),
            fmt_f64(rep.bound_middle),
            fmt_f64(rep.bound_outer)
        ));
        reports.push(rep);
    }
    ctx.write_csv(
        "probes_psi.csv",
        &[],
        "lambda,r_cut,rho,max_inner,max_middle,max_outer,bound_inner,bound_middle,bound_outer",
        psi_rows,
    )?;
    // middle region: doubling R should scale the max like R^(-2r)
    let middle_ratio = reports[1].max_middle / reports[0].max_middle;
    let middle_predict = 2.0f64.powf(-2.0 * config.r);
    ctx.check(
        "psi_middle_r_scaling",
        (middle_ratio / middle_predict - 1.0).abs() <= 0.2,
        middle_ratio,
        format!("predicted {middle_predict}"),
    );
    // inner region: doubling lambda should scale like lambda^(2r-2c)
    let inner_ratio = reports[2].max_inner / reports[0].max_inner;
    let inner_predict = 2.0f64.powf(2.0 * config.r - 2.0 * config.c);
    ctx.check(
        "psi_inner_lambda_scaling",
        (inner_ratio / inner_predict - 1.0).abs() <= 0.2,
        inner_ratio,
        format!("predicted {inner_predict}"),
    );
    Ok(())
}

fn run_kernel(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config.clone();
    let grid = build_grid(&config)?;
    let t = config.t_end.unwrap_or(1.0);
    let table = ctx.timed("kernel_table", |_| {
        kernel_table(config.r, t, &grid.cell_centers)
    })?;
    let rows: Vec<String> = table
        .points
        .iter()
        .zip(&table.values)
        .map(|(x, v)| format!("{},{}", fmt_f64(*x), fmt_f64(*v)))
        .collect();
    ctx.write_csv(
        "kernel.csv",
        &[
            format!("r={}", fmt_f64(config.r)),
            format!("t={}", fmt_f64(t)),
            format!("frequency_cutoff={}", fmt_f64(table.frequency_cutoff)),
        ],
        "x,K",
        rows,
    )?;
    // two-route normalization: lattice sum plus analytic out-of-window mass
    let lattice = grid.cell_width * table.values.iter().sum::<f64>();
    let in_window = windowed_mass(config.r, t, config.truncation_radius)?;
    let total = lattice + (1.0 - in_window);
    ctx.check(
        "kernel_normalization",
        (total - 1.0).abs() <= 1e-6,
        total,
        "lattice mass plus analytic tail".into(),
    );
    // self-similarity: direct (unreduced) quadrature at 4t against the
    // rescaled table at t
    let scale = 4.0f64.powf(-1.0 / (2.0 * config.r));
    let scaled_pts: Vec<f64> = grid.cell_centers.iter().map(|x| scale * x).collect();
    let t1 = kernel_table(config.r, t, &scaled_pts)?;
    let mut worst = 0.0f64;
    for (k, x) in grid.cell_centers.iter().enumerate().step_by(16) {
        let direct = kernel_value_direct(config.r, 4.0 * t, *x)?;
        worst = worst.max((direct - scale * t1.values[k]).abs());
    }
    ctx.check(
        "kernel_self_similarity",
        worst <= 1e-8,
        worst,
        "pointwise defect between rescaled tables".into(),
    );
    Ok(())
}
