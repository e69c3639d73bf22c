//! Batch driver behind the `nlds` binary.
//!
//! `nlds <subcommand> [--config <path>] [--out <dir>] [--dx ..] [--dtau ..] [--seed ..]`
//!
//! Exit codes: 0 success, 1 unknown subcommand or usage error, 2 invalid
//! configuration, 3 numerical blow-up or I/O failure, 4 `selftest` ran but
//! at least one check failed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::attractor::{
    absorption_time, containment_check, distance_series, omega_limit_estimate, run_bundle,
    BundleOptions, Metric, NormKind,
};
use crate::comparison::{rebased_sandwich, solve_envelope};
use crate::dissipativity::{dissipativity_report, ScanRange, LIMSUP_WINDOW};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::integrator::{
    pushforward, solve_quasilinear_partial, solve_quasilinear_with, solve_semilinear_until, Clock,
    SolveOptions, DEFAULT_DTAU,
};
use crate::io::{
    spec_hash, write_json, write_theta_csv, write_timechange_csv, write_trajectory_csv,
    TrajectorySummary, SCHEMA_VERSION,
};
use crate::model::{validate_spec, InitialFunction, InitialProfile, ProblemSpec};
use crate::suite::{self, SuiteConfig};
use crate::timechange::{compute_alpha0, delay_window};

macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "nlds", version, about = "Nonlocal diffusion with delay: solvers, checks and artifacts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quasilinear solve; writes the trajectory CSV and a norm summary.
    Simulate(Common),
    /// Quasilinear versus time-changed semilinear solve.
    TransformCheck(Common),
    /// Initial-segment map and its window bounds.
    DelayWindow(Common),
    /// Envelope problems and the re-based sandwich check.
    Envelope(Common),
    /// Structural conditions, absorbing radius and theta.
    Conditions(Common),
    /// Trajectory bundle with absorption and containment estimates.
    Attractor(Common),
    /// Acceptance checks at reduced resolution plus plotting artifacts.
    Selftest(Common),
}

#[derive(Debug, Args, Clone)]
struct Common {
    /// JSON run configuration; the built-in canonical problem when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "nlds-out")]
    out: PathBuf,
    #[arg(long)]
    dx: Option<f64>,
    #[arg(long)]
    dtau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Discretization {
    pub dtau: f64,
    /// Semilinear step; `dtau` when absent.
    pub dt: Option<f64>,
    /// Initial-segment map step; the solver step when absent.
    pub ds: Option<f64>,
    /// Sampling of `φ`; the solver step when absent.
    pub dsigma: Option<f64>,
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization {
            dtau: DEFAULT_DTAU,
            dt: None,
            ds: None,
            dsigma: None,
        }
    }
}

impl Discretization {
    fn dt(&self) -> f64 {
        self.dt.unwrap_or(self.dtau)
    }

    fn dsigma(&self) -> f64 {
        self.dsigma.unwrap_or(self.dtau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub t_end: f64,
    pub record_every: usize,
}

impl Default for SimulateParams {
    fn default() -> Self {
        SimulateParams {
            t_end: 2.0,
            record_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformParams {
    pub tau_end: f64,
    pub clock: Clock,
    pub record_every: usize,
}

impl Default for TransformParams {
    fn default() -> Self {
        TransformParams {
            tau_end: 2.0,
            clock: Clock::Consistent,
            record_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeParams {
    /// Single level for the first-interval envelopes; `sup |φ|` when absent.
    pub k: Option<f64>,
    pub intervals: usize,
    pub tolerance: f64,
    pub record_every: usize,
}

impl Default for EnvelopeParams {
    fn default() -> Self {
        EnvelopeParams {
            k: None,
            intervals: 5,
            tolerance: 1e-6,
            record_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionsParams {
    pub c0: f64,
    /// Closed-form constant of the reaction family when absent.
    pub c1: Option<f64>,
    pub scan_half_width: f64,
    pub scan_step: f64,
}

impl Default for ConditionsParams {
    fn default() -> Self {
        ConditionsParams {
            c0: 1.0,
            c1: None,
            scan_half_width: 10.0,
            scan_step: 1e-3,
        }
    }
}

impl ConditionsParams {
    fn scan(&self) -> ScanRange {
        ScanRange {
            half_width: self.scan_half_width,
            step: self.scan_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttractorParams {
    pub members: usize,
    /// Random histories with this `sup ‖φ‖_∞`.
    pub member_linf: f64,
    pub n_modes: u32,
    pub t_end: f64,
    pub snap_every: f64,
    pub segment_samples: usize,
    pub window_fraction: f64,
    pub tolerance: f64,
}

impl Default for AttractorParams {
    fn default() -> Self {
        AttractorParams {
            members: 8,
            member_linf: 2.0,
            n_modes: 6,
            t_end: 5.0,
            snap_every: 0.05,
            segment_samples: 5,
            window_fraction: LIMSUP_WINDOW,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    #[default]
    Reduced,
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SelftestParams {
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub spec: ProblemSpec,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub simulate: SimulateParams,
    #[serde(default)]
    pub transform_check: TransformParams,
    #[serde(default)]
    pub envelope: EnvelopeParams,
    #[serde(default)]
    pub conditions: ConditionsParams,
    #[serde(default)]
    pub attractor: AttractorParams,
    #[serde(default)]
    pub selftest: SelftestParams,
}

impl RunConfig {
    /// Chafee–Infante problem on `dx = 1/256` with `φ = sin(πx)`.
    pub fn canonical() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            spec: ProblemSpec::canonical(
                Grid::from_dx(crate::grid::DEFAULT_DX).expect("default grid"),
                InitialProfile::sine(1.0),
            ),
            discretization: Discretization::default(),
            seed: 0,
            simulate: SimulateParams::default(),
            transform_check: TransformParams::default(),
            envelope: EnvelopeParams::default(),
            conditions: ConditionsParams::default(),
            attractor: AttractorParams::default(),
            selftest: SelftestParams::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    fn apply(&mut self, flags: &Common) -> Result<()> {
        if let Some(dx) = flags.dx {
            self.spec.grid = Grid::from_dx(dx)?;
        }
        if let Some(dtau) = flags.dtau {
            self.discretization.dtau = dtau;
        }
        if let Some(seed) = flags.seed {
            self.seed = seed;
        }
        Ok(())
    }

    /// Schema, step sizes, tolerances and the problem itself. Clamping of
    /// the diffusion law is tolerated.
    pub fn validate(&self) -> Result<()> {
        let mut diags = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            diags.push(format!(
                "schema_version must be {SCHEMA_VERSION} (got {})",
                self.schema_version
            ));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let d = &self.discretization;
        for (name, v) in [
            ("dtau", Some(d.dtau)),
            ("dt", d.dt),
            ("ds", d.ds),
            ("dsigma", d.dsigma),
            ("simulate.t_end", Some(self.simulate.t_end)),
            ("transform_check.tau_end", Some(self.transform_check.tau_end)),
            ("envelope.tolerance", Some(self.envelope.tolerance)),
            ("conditions.scan_half_width", Some(self.conditions.scan_half_width)),
            ("conditions.scan_step", Some(self.conditions.scan_step)),
            ("attractor.member_linf", Some(self.attractor.member_linf)),
            ("attractor.t_end", Some(self.attractor.t_end)),
            ("attractor.snap_every", Some(self.attractor.snap_every)),
            ("attractor.tolerance", Some(self.attractor.tolerance)),
        ] {
            if let Some(v) = v {
                if !positive(v) {
                    diags.push(format!("{name} must be positive (got {v})"));
                }
            }
        }
        if let Some(k) = self.envelope.k {
            if !(k >= 0.0 && k.is_finite()) {
                diags.push(format!("envelope.k must be nonnegative (got {k})"));
            }
        }
        if self.envelope.intervals == 0 {
            diags.push("envelope.intervals must be at least 1".into());
        }
        if self.attractor.members == 0 {
            diags.push("attractor.members must be at least 1".into());
        }
        let w = self.attractor.window_fraction;
        if !(w > 0.0 && w < 1.0) {
            diags.push(format!("attractor.window_fraction must lie in (0, 1) (got {w})"));
        }
        diags.extend(validate_spec(&self.spec).into_iter().filter(|m| !m.contains("clamping")));
        if diags.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(diags))
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        e if e.is_blow_up() => EXIT_NUMERICAL,
        Error::Io { .. } => EXIT_NUMERICAL,
        Error::Member { source, .. } => exit_code(source),
        _ => EXIT_VALIDATION,
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a, E: Serialize> {
    schema_version: u32,
    subcommand: &'a str,
    spec_hash: String,
    config: &'a RunConfig,
    artifacts: Vec<String>,
    #[serde(flatten)]
    extra: E,
}

fn write_manifest<E: Serialize>(out: &Path, sub: &str, cfg: &RunConfig, artifacts: &[&str], extra: E) -> Result<()> {
    let m = Manifest {
        schema_version: SCHEMA_VERSION,
        subcommand: sub,
        spec_hash: spec_hash(&cfg.spec),
        config: cfg,
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
        extra,
    };
    write_json(&out.join("manifest.json"), &m)
}

#[derive(Serialize)]
struct NoExtra {}

fn phi_of(cfg: &RunConfig) -> Result<InitialFunction> {
    cfg.spec.initial_function(cfg.discretization.dsigma())
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let phi = phi_of(cfg)?;
    let opts = SolveOptions::every(cfg.simulate.record_every);
    let (traj, err) = solve_quasilinear_partial(&cfg.spec, &phi, cfg.simulate.t_end, cfg.discretization.dtau, &opts);
    write_trajectory_csv(&out.join("trajectory.csv"), &traj)?;
    write_json(&out.join("summary.json"), &TrajectorySummary::of(&traj))?;
    write_manifest(out, "simulate", cfg, &["trajectory.csv", "summary.json"], NoExtra {})?;
    match err {
        Some(e) => Err(e),
        None => {
            let (t, u) = traj.last().expect("nonempty");
            say!("simulate: {} stamps to tau = {t}, final sup norm {}", traj.len(), u.linf());
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct TransformReport {
    schema_version: u32,
    clock: Clock,
    tau_end: f64,
    sup_l2_difference: f64,
    stamps: Vec<f64>,
    l2_difference: Vec<f64>,
    t_final: f64,
    alpha0_t_start: f64,
}

fn transform_check(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = &cfg.transform_check;
    let phi = phi_of(cfg)?;
    let dtau = cfg.discretization.dtau;
    let q = solve_quasilinear_with(&cfg.spec, &phi, p.tau_end, dtau, &SolveOptions::every(p.record_every))?;
    let opts = SolveOptions {
        clock: p.clock,
        ds: cfg.discretization.ds,
        ..Default::default()
    };
    let s = solve_semilinear_until(&cfg.spec, &phi, p.tau_end, cfg.discretization.dt(), &opts)?;
    let w = pushforward(&s.trajectory, &s.map, q.stamps())?;
    let diffs: Vec<f64> = q.states().iter().zip(w.states()).map(|(a, b)| a.sub(b).l2()).collect();
    let report = TransformReport {
        schema_version: SCHEMA_VERSION,
        clock: p.clock,
        tau_end: p.tau_end,
        sup_l2_difference: diffs.iter().copied().fold(0.0, f64::max),
        stamps: q.stamps().to_vec(),
        l2_difference: diffs,
        t_final: s.map.last().0,
        alpha0_t_start: s.alpha0.t_start,
    };
    write_json(&out.join("report.json"), &report)?;
    write_timechange_csv(&out.join("timechange.csv"), &s.map)?;
    write_trajectory_csv(&out.join("quasilinear.csv"), &q)?;
    write_trajectory_csv(&out.join("pushforward.csv"), &w)?;
    write_manifest(
        out,
        "transform-check",
        cfg,
        &["report.json", "timechange.csv", "quasilinear.csv", "pushforward.csv"],
        NoExtra {},
    )?;
    say!("transform-check: sup l2 difference {}", report.sup_l2_difference);
    Ok(())
}

fn delay_window_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let phi = phi_of(cfg)?;
    let ds = cfg.discretization.ds.unwrap_or(cfg.discretization.dtau);
    let report = delay_window(&phi, &cfg.spec, ds)?;
    let a0 = compute_alpha0(&phi, &cfg.spec, ds)?;
    write_json(&out.join("report.json"), &report)?;
    write_timechange_csv(&out.join("alpha0.csv"), &a0.map)?;
    write_manifest(out, "delay-window", cfg, &["report.json", "alpha0.csv"], NoExtra {})?;
    say!(
        "delay-window: -t_start = {} in [{}, {}]: {}",
        report.step_length, report.lower_bound, report.upper_bound, report.within_bounds
    );
    Ok(())
}

#[derive(Serialize)]
struct EnvelopeSummary<'a> {
    schema_version: u32,
    first_interval_k: f64,
    first_interval_violation: f64,
    rebased: &'a crate::comparison::SandwichReport,
    tolerance: f64,
    passed: bool,
}

fn envelope_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = &cfg.envelope;
    let phi = phi_of(cfg)?;
    let dt = cfg.discretization.dt();
    let tau_end = p.intervals as f64 * cfg.spec.rho;
    let opts = SolveOptions {
        ds: cfg.discretization.ds,
        ..Default::default()
    };
    let run = solve_semilinear_until(&cfg.spec, &phi, tau_end, dt, &opts)?;
    let rebased = rebased_sandwich(&cfg.spec, &phi, &run, p.intervals, dt)?;
    let k = p.k.unwrap_or_else(|| phi.sup_linf());
    let t1 = run.map.invert(cfg.spec.rho)?;
    let pair = solve_envelope(&cfg.spec, k, t1, dt)?;
    let mid = slice_until(&run.trajectory, t1)?;
    let first = crate::comparison::check_sandwich(&pair.lower, &mid, &pair.upper);
    let summary = EnvelopeSummary {
        schema_version: SCHEMA_VERSION,
        first_interval_k: k,
        first_interval_violation: first,
        rebased: &rebased,
        tolerance: p.tolerance,
        passed: first <= p.tolerance && rebased.max_violation <= p.tolerance,
    };
    write_json(&out.join("report.json"), &summary)?;
    let every = p.record_every.max(1);
    write_trajectory_csv(&out.join("lower.csv"), &thin(&pair.lower, every)?)?;
    write_trajectory_csv(&out.join("upper.csv"), &thin(&pair.upper, every)?)?;
    write_trajectory_csv(&out.join("trajectory.csv"), &thin(&run.trajectory, every)?)?;
    write_timechange_csv(&out.join("timechange.csv"), &run.map)?;
    write_manifest(
        out,
        "envelope",
        cfg,
        &["report.json", "lower.csv", "upper.csv", "trajectory.csv", "timechange.csv"],
        NoExtra {},
    )?;
    say!(
        "envelope: violation {first} on the first interval, {} re-based over {} intervals",
        rebased.max_violation, p.intervals
    );
    Ok(())
}

fn slice_until(traj: &crate::integrator::Trajectory, t_end: f64) -> Result<crate::integrator::Trajectory> {
    let mut out = crate::integrator::Trajectory::new();
    for ((t, u), d) in traj.iter().zip(traj.diagnostics()) {
        if t <= t_end * (1.0 + 1e-12) {
            out.push(t, u.clone(), d.coeff)?;
        }
    }
    Ok(out)
}

fn thin(traj: &crate::integrator::Trajectory, every: usize) -> Result<crate::integrator::Trajectory> {
    let mut out = crate::integrator::Trajectory::new();
    let n = traj.len();
    for (i, ((t, u), d)) in traj.iter().zip(traj.diagnostics()).enumerate() {
        if i % every == 0 || i + 1 == n {
            out.push(t, u.clone(), d.coeff)?;
        }
    }
    Ok(out)
}

fn conditions_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = &cfg.conditions;
    let report = dissipativity_report(&cfg.spec, p.c0, p.c1, p.scan())?;
    let mut artifacts = vec!["conditions.json"];
    write_json(&out.join("conditions.json"), &report)?;
    if let Some(theta) = &report.theta {
        write_theta_csv(&out.join("theta.csv"), theta)?;
        artifacts.push("theta.csv");
    }
    write_manifest(out, "conditions", cfg, &artifacts, NoExtra {})?;
    say!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?);
    Ok(())
}

/// Random histories for bundle members, one stream per member.
pub fn random_members(cfg: &RunConfig) -> Result<Vec<InitialFunction>> {
    let p = &cfg.attractor;
    (0..p.members)
        .map(|j| {
            let profile = InitialProfile::RandomModes {
                seed: cfg.seed.wrapping_mul(1000).wrapping_add(j as u64),
                n_modes: p.n_modes,
                linf: p.member_linf,
            };
            InitialFunction::from_profile(&profile, cfg.spec.grid, cfg.spec.rho, cfg.discretization.dsigma())
        })
        .collect()
}

#[derive(Serialize)]
struct BundleExtra {
    stamps: Vec<f64>,
    k_abs: Option<f64>,
    absorption_time: Option<f64>,
    omega_limit_clusters: Option<usize>,
    linf_distance_to_zero: Vec<f64>,
    containment: Option<crate::attractor::ContainmentReport>,
    diagnostics: Vec<String>,
}

fn attractor_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = &cfg.attractor;
    let members = random_members(cfg)?;
    let opts = BundleOptions {
        dtau: cfg.discretization.dtau,
        segment_samples: p.segment_samples,
    };
    let run = run_bundle(&members, &cfg.spec, p.t_end, p.snap_every, &opts)?;
    let mut artifacts: Vec<String> = Vec::new();
    for i in 0..members.len() {
        let name = format!("member_{i:03}.csv");
        write_trajectory_csv(&out.join(&name), &run.member_trajectory(i)?)?;
        artifacts.push(name);
    }
    let mut diagnostics = Vec::new();
    let c = &cfg.conditions;
    let report = match dissipativity_report(&cfg.spec, c.c0, c.c1, c.scan()) {
        Ok(r) => Some(r),
        Err(e) => {
            diagnostics.push(e.to_string());
            None
        }
    };
    let k_abs = report.as_ref().and_then(|r| r.k_abs);
    let theta = report.and_then(|r| r.theta);
    let absorption = k_abs.and_then(|k| absorption_time(&run, k, Metric::endpoint(NormKind::Linf)));
    let clusters = match omega_limit_estimate(&run, p.window_fraction, None) {
        Ok(reps) => Some(reps.len()),
        Err(e) => {
            diagnostics.push(e.to_string());
            None
        }
    };
    let containment = match &theta {
        Some(th) => match containment_check(&run, th, p.window_fraction, p.tolerance) {
            Ok(c) => Some(c),
            Err(e) => {
                diagnostics.push(e.to_string());
                None
            }
        },
        None => None,
    };
    let zero = [GridFunction::zeros(cfg.spec.grid)];
    let series = distance_series(&run, &zero, NormKind::Linf)?;
    if let Some(th) = &theta {
        write_theta_csv(&out.join("theta.csv"), th)?;
        artifacts.push("theta.csv".into());
    }
    let extra = BundleExtra {
        stamps: run.stamps(),
        k_abs,
        absorption_time: absorption,
        omega_limit_clusters: clusters,
        linf_distance_to_zero: series.iter().map(|s| s.1).collect(),
        containment,
        diagnostics,
    };
    let names: Vec<&str> = artifacts.iter().map(String::as_str).collect();
    write_manifest(out, "attractor", cfg, &names, &extra)?;
    say!(
        "attractor: {} members, absorption time {:?}, contained {:?}",
        members.len(),
        extra.absorption_time,
        extra.containment.as_ref().map(|c| c.contained)
    );
    Ok(())
}

#[derive(Serialize)]
struct SelftestReport<'a> {
    schema_version: u32,
    resolution: Resolution,
    suite: &'a SuiteConfig,
    passed: bool,
    criteria: &'a [suite::CriterionResult],
}

fn selftest(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let suite_cfg = match cfg.selftest.resolution {
        Resolution::Reduced => SuiteConfig::reduced(cfg.seed),
        Resolution::Canonical => SuiteConfig::canonical(cfg.seed),
    };
    let results = suite::run_all(&suite_cfg);
    for r in &results {
        say!("{}", r.line());
    }
    let passed = results.iter().all(|r| r.passed);
    write_json(
        &out.join("report.json"),
        &SelftestReport {
            schema_version: SCHEMA_VERSION,
            resolution: cfg.selftest.resolution,
            suite: &suite_cfg,
            passed,
            criteria: &results,
        },
    )?;

    let grid = suite_cfg.grid()?;
    let dtau = suite_cfg.dtau;
    let heat = ProblemSpec::heat(grid, InitialProfile::sine(1.0));
    let traj = solve_quasilinear_with(&heat, &heat.initial_function(dtau)?, 0.5, dtau, &SolveOptions::every(50))?;
    write_trajectory_csv(&out.join("heat/trajectory.csv"), &traj)?;
    write_json(&out.join("heat/summary.json"), &TrajectorySummary::of(&traj))?;

    let canonical = ProblemSpec::canonical(grid, InitialProfile::sine(1.0));
    let phi = canonical.initial_function(dtau)?;
    let traj = solve_quasilinear_with(&canonical, &phi, 5.0, dtau, &SolveOptions::every(100))?;
    write_trajectory_csv(&out.join("canonical/trajectory.csv"), &traj)?;
    write_json(&out.join("canonical/summary.json"), &TrajectorySummary::of(&traj))?;
    let run = solve_semilinear_until(&canonical, &phi, 2.0, dtau, &SolveOptions::default())?;
    write_timechange_csv(&out.join("canonical/timechange.csv"), &run.map)?;

    let report = dissipativity_report(&canonical, suite::CANONICAL_C0, None, ScanRange::default())?;
    write_json(&out.join("canonical/conditions.json"), &report)?;
    if let Some(theta) = &report.theta {
        write_theta_csv(&out.join("canonical/theta.csv"), theta)?;
    }
    write_manifest(
        out,
        "selftest",
        cfg,
        &[
            "report.json",
            "heat/trajectory.csv",
            "heat/summary.json",
            "canonical/trajectory.csv",
            "canonical/summary.json",
            "canonical/timechange.csv",
            "canonical/conditions.json",
            "canonical/theta.csv",
        ],
        NoExtra {},
    )?;
    say!("selftest: {}", if passed { "all checks passed" } else { "some checks failed" });
    Ok(passed)
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io { path, message } => Error::Format(format!("cannot read config {path}: {message}")),
            other => other,
        })?,
        None => RunConfig::canonical(),
    };
    cfg.apply(common)?;
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<i32> {
    let (common, name) = match &command {
        Command::Simulate(c) => (c, "simulate"),
        Command::TransformCheck(c) => (c, "transform-check"),
        Command::DelayWindow(c) => (c, "delay-window"),
        Command::Envelope(c) => (c, "envelope"),
        Command::Conditions(c) => (c, "conditions"),
        Command::Attractor(c) => (c, "attractor"),
        Command::Selftest(c) => (c, "selftest"),
    };
    let cfg = resolve(common)?;
    let out = common.out.as_path();
    match name {
        "simulate" => simulate(&cfg, out)?,
        "transform-check" => transform_check(&cfg, out)?,
        "delay-window" => delay_window_cmd(&cfg, out)?,
        "envelope" => envelope_cmd(&cfg, out)?,
        "conditions" => conditions_cmd(&cfg, out)?,
        "attractor" => attractor_cmd(&cfg, out)?,
        _ => {
            return Ok(if selftest(&cfg, out)? { EXIT_OK } else { EXIT_CHECK_FAILED });
        }
    }
    Ok(EXIT_OK)
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("nlds: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_config_round_trips() {
        let cfg = RunConfig::canonical();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let spec = serde_json::to_value(RunConfig::canonical().spec).unwrap();
        let text = serde_json::json!({ "schema_version": 1, "spec": spec }).to_string();
        let cfg = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg, RunConfig::canonical());
    }

    #[test]
    fn unknown_field_is_rejected() {
        let mut v = serde_json::to_value(RunConfig::canonical()).unwrap();
        v["simulate"]["t_final"] = serde_json::json!(1.0);
        assert!(matches!(RunConfig::from_json(&v.to_string()), Err(Error::Format(_))));
    }

    #[test]
    fn flags_override_config() {
        let mut cfg = RunConfig::canonical();
        let flags = Common {
            config: None,
            out: PathBuf::from("x"),
            dx: Some(1.0 / 32.0),
            dtau: Some(1e-3),
            seed: Some(9),
        };
        cfg.apply(&flags).unwrap();
        assert_eq!(cfg.spec.grid.n_interior(), 31);
        assert_eq!(cfg.discretization.dtau, 1e-3);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn validation_collects_messages() {
        let mut cfg = RunConfig::canonical();
        cfg.spec.m = 0.0;
        cfg.discretization.dtau = -1.0;
        cfg.schema_version = 2;
        match cfg.validate() {
            Err(Error::Validation(d)) => {
                assert!(d.iter().any(|m| m.contains("m must be positive")));
                assert!(d.iter().any(|m| m.contains("dtau must be positive")));
                assert!(d.iter().any(|m| m.contains("schema_version")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Validation(vec![])), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::BlowUp { time: 1.0, linf: 1e7 }), EXIT_NUMERICAL);
        let io = Error::Io {
            path: "p".into(),
            message: "m".into(),
        };
        assert_eq!(exit_code(&io), EXIT_NUMERICAL);
        let member = Error::Member {
            member: 2,
            source: Box::new(Error::BlowUp { time: 0.5, linf: 2e6 }),
        };
        assert_eq!(exit_code(&member), EXIT_NUMERICAL);
    }

    #[test]
    fn unknown_subcommand_exits_one() {
        assert_eq!(run(["nlds", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["nlds"]), EXIT_USAGE);
    }
}
