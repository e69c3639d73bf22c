//! Delay-PDE solvers.
//!
//! Both solvers use the same linearly implicit Euler step: diffusion
//! implicit with the nonlocal coefficient frozen at the start of the step,
//! reaction, delay and forcing explicit. The quasilinear solver marches in
//! `τ`; the semilinear solver marches in `t`, divides the explicit terms by
//! `a(l(u))` and accumulates `α`. Both keep their history in `τ`-stamps, so
//! the delayed argument is a plain lookup at `τ - ρ` and the method of steps
//! needs no interval bookkeeping.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{implicit_diffusion_step, Grid, GridFunction};
use crate::model::{eval_diffusion, eval_f, InitialFunction, ProblemSpec};
use crate::timechange::{compute_alpha0, Alpha0, TimeChange};

/// Sup-norm above which a run is declared to have blown up.
pub const BLOWUP_LINF: f64 = 1e6;

/// Default quasilinear step.
pub const DEFAULT_DTAU: f64 = 1e-4;

fn stamp_tolerance(t: f64) -> f64 {
    1e-9 * (1.0 + t.abs())
}

/// `τ`-stamped record of past states.
#[derive(Debug, Clone, Default)]
pub struct HistoryBuffer {
    entries: VecDeque<(f64, GridFunction)>,
}

impl HistoryBuffer {
    pub fn from_initial(phi: &InitialFunction) -> Self {
        HistoryBuffer {
            entries: phi
                .stamps()
                .iter()
                .copied()
                .zip(phi.states().iter().cloned())
                .collect(),
        }
    }

    pub fn push(&mut self, stamp: f64, state: GridFunction) -> Result<()> {
        if let Some(&(last, _)) = self.entries.back() {
            if !(stamp > last) {
                return Err(Error::Sequencing(format!(
                    "history stamp {stamp} does not follow {last}"
                )));
            }
        }
        self.entries.push_back((stamp, state));
        Ok(())
    }

    /// Drop entries older than `cutoff`, keeping one entry at or before it so
    /// lookups at `cutoff` stay bracketed.
    pub fn evict_before(&mut self, cutoff: f64) {
        while self.entries.len() > 2 && self.entries[1].0 <= cutoff {
            self.entries.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn oldest(&self) -> Option<f64> {
        self.entries.front().map(|e| e.0)
    }

    pub fn newest(&self) -> Option<f64> {
        self.entries.back().map(|e| e.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (f64, &GridFunction)> {
        self.entries.iter().map(|(t, s)| (*t, s))
    }

    /// Linear interpolation in time; exact at stamps.
    pub fn eval(&self, tau: f64) -> Result<GridFunction> {
        let (lo, hi) = match (self.oldest(), self.newest()) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => {
                return Err(Error::Range {
                    what: "history time",
                    value: tau,
                    lo: f64::NAN,
                    hi: f64::NAN,
                })
            }
        };
        let tol = stamp_tolerance(tau);
        if !(tau >= lo - tol && tau <= hi + tol) {
            return Err(Error::Range {
                what: "history time",
                value: tau,
                lo,
                hi,
            });
        }
        let t = tau.clamp(lo, hi);
        let idx = self.entries.partition_point(|e| e.0 <= t);
        let j = idx.saturating_sub(1);
        let (t0, s0) = &self.entries[j];
        if *t0 == t || j + 1 == self.entries.len() {
            return Ok(s0.clone());
        }
        let (t1, s1) = &self.entries[j + 1];
        Ok(GridFunction::lerp(s0, s1, (t - t0) / (t1 - t0)))
    }
}

pub fn history_eval(buf: &HistoryBuffer, tau: f64) -> Result<GridFunction> {
    buf.eval(tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StampDiagnostics {
    pub l2: f64,
    pub h10: f64,
    pub linf: f64,
    /// Diffusion coefficient `a(l(u))` evaluated at this state.
    pub coeff: f64,
}

/// Recorded solution path.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    stamps: Vec<f64>,
    states: Vec<GridFunction>,
    diagnostics: Vec<StampDiagnostics>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, stamp: f64, state: GridFunction, coeff: f64) -> Result<()> {
        if let Some(&last) = self.stamps.last() {
            if !(stamp > last) {
                return Err(Error::Sequencing(format!(
                    "trajectory stamp {stamp} does not follow {last}"
                )));
            }
        }
        let n = state.norms();
        self.diagnostics.push(StampDiagnostics {
            l2: n.l2,
            h10: n.h10,
            linf: n.linf,
            coeff,
        });
        self.stamps.push(stamp);
        self.states.push(state);
        Ok(())
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    pub fn states(&self) -> &[GridFunction] {
        &self.states
    }

    pub fn diagnostics(&self) -> &[StampDiagnostics] {
        &self.diagnostics
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn grid(&self) -> Option<Grid> {
        self.states.first().map(GridFunction::grid)
    }

    pub fn last(&self) -> Option<(f64, &GridFunction)> {
        self.stamps.last().map(|&t| (t, self.states.last().unwrap()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &GridFunction)> {
        self.stamps.iter().copied().zip(self.states.iter())
    }

    /// Index of the stamp equal to `t` within rounding, if any.
    pub fn find_stamp(&self, t: f64) -> Option<usize> {
        let idx = self.stamps.partition_point(|&s| s < t - stamp_tolerance(t));
        (idx < self.stamps.len() && (self.stamps[idx] - t).abs() <= stamp_tolerance(t)).then_some(idx)
    }

    /// State at `t` by linear interpolation between stamps.
    pub fn interpolate(&self, t: f64) -> Result<GridFunction> {
        if let Some(i) = self.find_stamp(t) {
            return Ok(self.states[i].clone());
        }
        let (lo, hi) = match (self.stamps.first(), self.stamps.last()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => {
                return Err(Error::Range {
                    what: "trajectory time",
                    value: t,
                    lo: f64::NAN,
                    hi: f64::NAN,
                })
            }
        };
        if !(t >= lo && t <= hi) {
            return Err(Error::Range {
                what: "trajectory time",
                value: t,
                lo,
                hi,
            });
        }
        let j = self.stamps.partition_point(|&s| s <= t) - 1;
        let w = (t - self.stamps[j]) / (self.stamps[j + 1] - self.stamps[j]);
        Ok(GridFunction::lerp(&self.states[j], &self.states[j + 1], w))
    }

    fn interpolate_coeff(&self, t: f64) -> f64 {
        let j = self.stamps.partition_point(|&s| s <= t).saturating_sub(1);
        if j + 1 >= self.stamps.len() {
            return self.diagnostics[j].coeff;
        }
        let w = ((t - self.stamps[j]) / (self.stamps[j + 1] - self.stamps[j])).clamp(0.0, 1.0);
        self.diagnostics[j].coeff + w * (self.diagnostics[j + 1].coeff - self.diagnostics[j].coeff)
    }
}

/// Rate at which the semilinear solver advances `τ` per unit `t`.
///
/// Writing the quasilinear problem in a new time `t` with `u(t) = w(τ)`
/// gives `u_t = u_xx + (λf + γ·delay + h)/a(l(u))` only when
/// `dt/dτ = a(l(w))`, i.e. `dτ/dt = 1/a`. With `dτ/dt = a` the same
/// substitution yields `u_t = a²u_xx + a·(…)` instead, so the two runs solve
/// different problems. Both rates are offered; the default is the one under
/// which pushforward reproduces the quasilinear solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// `dτ/dt = 1/a(l(u))`, so `t = ∫₀^τ a(l(w(r))) dr`.
    #[default]
    Consistent,
    /// `dτ/dt = a(l(u))`, the literal `α(t) = ∫₀ᵗ a(l(u(r))) dr`.
    Literal,
}

impl Clock {
    pub fn rate(self, coeff: f64) -> f64 {
        match self {
            Clock::Literal => coeff,
            Clock::Consistent => 1.0 / coeff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Record every `record_every`-th step (the initial and final states are
    /// always recorded).
    pub record_every: usize,
    /// σ-spacing for sampling `φ`; defaults to the time step.
    pub dsigma: Option<f64>,
    /// Step for the initial-segment map in the semilinear solver; defaults to
    /// the time step.
    pub ds: Option<f64>,
    pub blowup_linf: f64,
    pub clock: Clock,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            record_every: 1,
            dsigma: None,
            ds: None,
            blowup_linf: BLOWUP_LINF,
            clock: Clock::Consistent,
        }
    }
}

impl SolveOptions {
    pub fn every(record_every: usize) -> Self {
        SolveOptions {
            record_every: record_every.max(1),
            ..Default::default()
        }
    }
}

fn check_parameters(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::Parameter(format!("final time must be nonnegative, got {t_end}")));
    }
    Ok((t_end / dt - 1e-9).ceil().max(0.0) as usize)
}

fn validated(spec: &ProblemSpec) -> Result<()> {
    let diags = crate::model::validate_spec(spec);
    // clamping is reported but tolerated: evaluation is total
    let fatal: Vec<String> = diags.into_iter().filter(|d| !d.contains("clamping")).collect();
    if fatal.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(fatal))
    }
}

/// `state + dt * scale * (λ f(state) + γ delayed + h(τ))`
fn explicit_update(
    spec: &ProblemSpec,
    state: &GridFunction,
    delayed: &GridFunction,
    tau: f64,
    dt: f64,
    scale: f64,
) -> Result<GridFunction> {
    let fu = eval_f(spec, state)?;
    let mut rhs = state.clone();
    rhs.axpy(dt * scale * spec.lambda, &fu);
    if spec.gamma != 0.0 {
        rhs.axpy(dt * scale * spec.gamma, delayed);
    }
    spec.h.add_to(tau, dt * scale, &mut rhs);
    Ok(rhs)
}

fn guard(state: GridFunction, time: f64, threshold: f64) -> Result<GridFunction> {
    let linf = state.linf();
    if state.first_non_finite().is_some() || linf > threshold {
        return Err(Error::BlowUp { time, linf });
    }
    Ok(state)
}

/// One quasilinear step from `τ` to `τ + dτ`.
pub fn step_quasilinear(
    state: &GridFunction,
    buf: &HistoryBuffer,
    spec: &ProblemSpec,
    tau: f64,
    dtau: f64,
) -> Result<GridFunction> {
    let coeff = eval_diffusion(spec, state);
    step_quasilinear_frozen(state, coeff, buf, spec, tau, dtau, BLOWUP_LINF)
}

fn step_quasilinear_frozen(
    state: &GridFunction,
    coeff: f64,
    buf: &HistoryBuffer,
    spec: &ProblemSpec,
    tau: f64,
    dtau: f64,
    threshold: f64,
) -> Result<GridFunction> {
    let delayed = buf.eval(tau - spec.rho)?;
    let rhs = explicit_update(spec, state, &delayed, tau, dtau, 1.0).map_err(|e| match e {
        Error::NonFinite { .. } => Error::BlowUp {
            time: tau,
            linf: state.linf(),
        },
        other => other,
    })?;
    guard(implicit_diffusion_step(&rhs, coeff, dtau), tau + dtau, threshold)
}

/// Incremental quasilinear solver in `τ`.
#[derive(Debug, Clone)]
pub struct QuasilinearSolver<'a> {
    spec: &'a ProblemSpec,
    dtau: f64,
    steps: u64,
    state: GridFunction,
    coeff: f64,
    history: HistoryBuffer,
    threshold: f64,
}

impl<'a> QuasilinearSolver<'a> {
    pub fn new(spec: &'a ProblemSpec, phi: &InitialFunction, dtau: f64) -> Result<Self> {
        check_parameters(0.0, dtau)?;
        let state = phi.at_zero().clone();
        Ok(QuasilinearSolver {
            spec,
            dtau,
            steps: 0,
            coeff: eval_diffusion(spec, &state),
            state,
            history: HistoryBuffer::from_initial(phi),
            threshold: BLOWUP_LINF,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn tau(&self) -> f64 {
        self.steps as f64 * self.dtau
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn state(&self) -> &GridFunction {
        &self.state
    }

    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    pub fn history(&self) -> &HistoryBuffer {
        &self.history
    }

    pub fn advance(&mut self) -> Result<()> {
        let tau = self.tau();
        let next = step_quasilinear_frozen(
            &self.state,
            self.coeff,
            &self.history,
            self.spec,
            tau,
            self.dtau,
            self.threshold,
        )?;
        self.steps += 1;
        let tau_new = self.tau();
        self.history.push(tau_new, next.clone())?;
        self.history.evict_before(tau_new - self.spec.rho - 2.0 * self.dtau);
        self.coeff = eval_diffusion(self.spec, &next);
        self.state = next;
        Ok(())
    }
}

/// Quasilinear run that keeps whatever was computed before a failure.
pub fn solve_quasilinear_partial(
    spec: &ProblemSpec,
    phi: &InitialFunction,
    t_end: f64,
    dtau: f64,
    opts: &SolveOptions,
) -> (Trajectory, Option<Error>) {
    let mut traj = Trajectory::new();
    let n_steps = match check_parameters(t_end, dtau) {
        Ok(n) => n,
        Err(e) => return (traj, Some(e)),
    };
    let mut solver = match QuasilinearSolver::new(spec, phi, dtau) {
        Ok(s) => s.with_threshold(opts.blowup_linf),
        Err(e) => return (traj, Some(e)),
    };
    let every = opts.record_every.max(1);
    traj.push(0.0, solver.state().clone(), solver.coeff()).expect("first stamp");
    for k in 1..=n_steps {
        if let Err(e) = solver.advance() {
            return (traj, Some(e));
        }
        if k % every == 0 || k == n_steps {
            traj.push(solver.tau(), solver.state().clone(), solver.coeff())
                .expect("increasing stamps");
        }
    }
    (traj, None)
}

pub fn solve_quasilinear_with(
    spec: &ProblemSpec,
    phi: &InitialFunction,
    t_end: f64,
    dtau: f64,
    opts: &SolveOptions,
) -> Result<Trajectory> {
    validated(spec)?;
    match solve_quasilinear_partial(spec, phi, t_end, dtau, opts) {
        (traj, None) => Ok(traj),
        (_, Some(e)) => Err(e),
    }
}

/// Quasilinear run on `[0, t_end]` recording every step; `φ` sampled with
/// spacing `dtau`.
pub fn solve_quasilinear(spec: &ProblemSpec, t_end: f64, dtau: f64) -> Result<Trajectory> {
    let phi = spec.initial_function(dtau)?;
    solve_quasilinear_with(spec, &phi, t_end, dtau, &SolveOptions::default())
}

/// Incremental semilinear solver in `t`.
#[derive(Debug, Clone)]
pub struct SemilinearSolver<'a> {
    spec: &'a ProblemSpec,
    dt: f64,
    steps: u64,
    state: GridFunction,
    coeff: f64,
    history: HistoryBuffer,
    map: TimeChange,
    threshold: f64,
    clock: Clock,
}

impl<'a> SemilinearSolver<'a> {
    pub fn new(spec: &'a ProblemSpec, phi: &InitialFunction, dt: f64) -> Result<Self> {
        check_parameters(0.0, dt)?;
        let state = phi.at_zero().clone();
        Ok(SemilinearSolver {
            spec,
            dt,
            steps: 0,
            coeff: eval_diffusion(spec, &state),
            state,
            history: HistoryBuffer::from_initial(phi),
            map: TimeChange::at_origin(),
            threshold: BLOWUP_LINF,
            clock: Clock::Consistent,
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn t(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// `α(t)` at the current step.
    pub fn tau(&self) -> f64 {
        self.map.last().1
    }

    pub fn state(&self) -> &GridFunction {
        &self.state
    }

    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    pub fn map(&self) -> &TimeChange {
        &self.map
    }

    pub fn into_map(self) -> TimeChange {
        self.map
    }

    pub fn advance(&mut self) -> Result<()> {
        let tau = self.tau();
        let delayed = self.history.eval(tau - self.spec.rho)?;
        let rhs = explicit_update(self.spec, &self.state, &delayed, tau, self.dt, 1.0 / self.coeff)
            .map_err(|e| match e {
                Error::NonFinite { .. } => Error::BlowUp {
                    time: self.t(),
                    linf: self.state.linf(),
                },
                other => other,
            })?;
        let next = guard(
            implicit_diffusion_step(&rhs, 1.0, self.dt),
            self.t() + self.dt,
            self.threshold,
        )?;
        self.steps += 1;
        let rate = self.clock.rate(self.coeff);
        self.map.accumulate(self.t(), rate)?;
        let tau_new = self.tau();
        self.history.push(tau_new, next.clone())?;
        let max_rate = self.clock.rate(self.spec.m).max(self.clock.rate(self.spec.big_m));
        self.history
            .evict_before(tau_new - self.spec.rho - 2.0 * max_rate * self.dt);
        self.coeff = eval_diffusion(self.spec, &next);
        self.state = next;
        Ok(())
    }
}

/// Result of a semilinear run.
#[derive(Debug, Clone)]
pub struct SemilinearRun {
    /// States stamped in `t`.
    pub trajectory: Trajectory,
    /// `τ` as a function of `t`, one knot per step.
    pub map: TimeChange,
    /// Initial-segment map computed from `φ` alone.
    pub alpha0: Alpha0,
}

pub fn solve_semilinear_with(
    spec: &ProblemSpec,
    phi: &InitialFunction,
    t_end: f64,
    dt: f64,
    opts: &SolveOptions,
) -> Result<SemilinearRun> {
    validated(spec)?;
    let n_steps = check_parameters(t_end, dt)?;
    let alpha0 = compute_alpha0(phi, spec, opts.ds.unwrap_or(dt))?;
    let mut solver = SemilinearSolver::new(spec, phi, dt)?
        .with_threshold(opts.blowup_linf)
        .with_clock(opts.clock);
    let every = opts.record_every.max(1);
    let mut traj = Trajectory::new();
    traj.push(0.0, solver.state().clone(), solver.coeff())?;
    for k in 1..=n_steps {
        solver.advance()?;
        if k % every == 0 || k == n_steps {
            traj.push(solver.t(), solver.state().clone(), solver.coeff())?;
        }
    }
    Ok(SemilinearRun {
        trajectory: traj,
        map: solver.into_map(),
        alpha0,
    })
}

/// Semilinear run continued until `α(t) ≥ tau_end`.
pub fn solve_semilinear_until(
    spec: &ProblemSpec,
    phi: &InitialFunction,
    tau_end: f64,
    dt: f64,
    opts: &SolveOptions,
) -> Result<SemilinearRun> {
    validated(spec)?;
    let slowest = opts.clock.rate(spec.m).min(opts.clock.rate(spec.big_m));
    let max_steps = check_parameters(tau_end / slowest, dt)? + 1;
    let alpha0 = compute_alpha0(phi, spec, opts.ds.unwrap_or(dt))?;
    let mut solver = SemilinearSolver::new(spec, phi, dt)?
        .with_threshold(opts.blowup_linf)
        .with_clock(opts.clock);
    let every = opts.record_every.max(1);
    let mut traj = Trajectory::new();
    traj.push(0.0, solver.state().clone(), solver.coeff())?;
    let mut k = 0;
    while solver.tau() < tau_end && k < max_steps {
        solver.advance()?;
        k += 1;
        if k % every == 0 || solver.tau() >= tau_end {
            traj.push(solver.t(), solver.state().clone(), solver.coeff())?;
        }
    }
    Ok(SemilinearRun {
        trajectory: traj,
        map: solver.into_map(),
        alpha0,
    })
}

/// Semilinear run on `[0, t_end]` recording every step, default clock.
pub fn solve_semilinear(spec: &ProblemSpec, t_end: f64, dt: f64) -> Result<SemilinearRun> {
    let phi = spec.initial_function(dt)?;
    solve_semilinear_with(spec, &phi, t_end, dt, &SolveOptions::default())
}

/// Restamp a `t`-trajectory in `τ`: `w(τ) = u(α⁻¹(τ))`.
pub fn pushforward(traj_t: &Trajectory, map: &TimeChange, tau_grid: &[f64]) -> Result<Trajectory> {
    let mut out = Trajectory::new();
    for &tau in tau_grid {
        let t = map.invert(tau)?;
        let state = traj_t.interpolate(t)?;
        out.push(tau, state, traj_t.interpolate_coeff(t))?;
    }
    Ok(out)
}

/// Discrete sine basis of a grid: `u_i = Σ_k c_k sin(kπ x_i)`.
struct SineBasis {
    n: usize,
    table: Vec<f64>,
    eigen: Vec<f64>,
}

impl SineBasis {
    fn new(grid: Grid) -> Self {
        let n = grid.n_interior();
        let dx = grid.dx();
        let mut table = vec![0.0; n * n];
        for k in 0..n {
            for i in 0..n {
                table[k * n + i] = ((k + 1) as f64 * PI * grid.x(i)).sin();
            }
        }
        let eigen = (0..n)
            .map(|k| {
                let s = ((k + 1) as f64 * PI * dx / 2.0).sin();
                4.0 / (dx * dx) * s * s
            })
            .collect();
        SineBasis { n, table, eigen }
    }

    fn forward(&self, u: &[f64]) -> Vec<f64> {
        let scale = 2.0 / (self.n as f64 + 1.0);
        (0..self.n)
            .map(|k| {
                let row = &self.table[k * self.n..(k + 1) * self.n];
                scale * row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    fn inverse(&self, c: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.n];
        for (k, &ck) in c.iter().enumerate() {
            let row = &self.table[k * self.n..(k + 1) * self.n];
            for (ui, s) in u.iter_mut().zip(row) {
                *ui += ck * s;
            }
        }
        u
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcatenationReport {
    /// Stamp actually probed (the last recorded step at or before the request).
    pub t_probe: f64,
    /// `‖u(t) - [S(t)φ(0) + Σ ∫ S(t-s) g(s) ds]‖₂`
    pub residual: f64,
    /// `L²` norm of each delay interval's contribution to the sum.
    pub interval_contributions: Vec<f64>,
}

/// Residual of the variation-of-constants identity at `t_probe`, with the
/// exact semigroup of `Δ_h` applied on the sine eigenbasis and the forcing
/// `g = (λ f(u) + γ u(α(t) - ρ) + h)/a(l(u))` held constant over each step.
///
/// The trajectory must record every step of the run that produced `map`.
pub fn concatenation_check(
    traj: &Trajectory,
    spec: &ProblemSpec,
    phi: &InitialFunction,
    map: &TimeChange,
    t_probe: f64,
) -> Result<ConcatenationReport> {
    let knots = map.knots();
    let probe = traj.stamps().partition_point(|&s| s <= t_probe + stamp_tolerance(t_probe));
    if probe == 0 {
        return Err(Error::Range {
            what: "probe time",
            value: t_probe,
            lo: traj.stamps().first().copied().unwrap_or(f64::NAN),
            hi: traj.stamps().last().copied().unwrap_or(f64::NAN),
        });
    }
    let probe = probe - 1;
    if knots.len() <= probe
        || traj.stamps()[..=probe]
            .iter()
            .zip(knots)
            .any(|(s, k)| (s - k.0).abs() > stamp_tolerance(*s))
    {
        return Err(Error::Parameter(
            "trajectory must record every step of the run that produced the time change".into(),
        ));
    }
    let grid = phi.grid();
    let basis = SineBasis::new(grid);
    let t_p = traj.stamps()[probe];

    let mut history = HistoryBuffer::from_initial(phi);
    for k in 1..=probe {
        history.push(knots[k].1, traj.states()[k].clone())?;
    }

    let phi0 = basis.forward(phi.at_zero().values());
    let mut coeffs: Vec<f64> = phi0
        .iter()
        .zip(&basis.eigen)
        .map(|(c, mu)| c * (-mu * t_p).exp())
        .collect();
    let mut interval_sums: Vec<Vec<f64>> = Vec::new();
    for n in 0..probe {
        let (t0, tau0) = knots[n];
        let t1 = knots[n + 1].0;
        let u = &traj.states()[n];
        let a = eval_diffusion(spec, u);
        let delayed = history.eval(tau0 - spec.rho)?;
        let mut g = eval_f(spec, u)?.scale(spec.lambda);
        g.axpy(spec.gamma, &delayed);
        spec.h.add_to(tau0, 1.0, &mut g);
        let g_hat = basis.forward(&g.scale(1.0 / a).into_values());
        let interval = (tau0 / spec.rho).floor().max(0.0) as usize;
        if interval_sums.len() <= interval {
            interval_sums.resize(interval + 1, vec![0.0; basis.n]);
        }
        for k in 0..basis.n {
            let mu = basis.eigen[k];
            let w = ((-mu * (t_p - t1)).exp() - (-mu * (t_p - t0)).exp()) / mu;
            coeffs[k] += w * g_hat[k];
            interval_sums[interval][k] += w * g_hat[k];
        }
    }
    let predicted = GridFunction::from_raw(grid, basis.inverse(&coeffs));
    let residual = traj.states()[probe].sub(&predicted).l2();
    let interval_contributions = interval_sums
        .iter()
        .map(|c| GridFunction::from_raw(grid, basis.inverse(c)).l2())
        .collect();
    Ok(ConcatenationReport {
        t_probe: t_p,
        residual,
        interval_contributions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::model::{DiffusionLaw, Forcing, InitialProfile, Nonlinearity};

    fn sine(g: Grid) -> GridFunction {
        GridFunction::from_fn(g, |x| (PI * x).sin())
    }

    #[test]
    fn history_exact_at_stamps_and_interpolates() {
        let g = Grid::new(7).unwrap();
        let u0 = GridFunction::from_fn(g, |x| x);
        let u1 = GridFunction::from_fn(g, |x| 1.0 - x * x);
        let mut buf = HistoryBuffer::default();
        buf.push(0.0, u0.clone()).unwrap();
        buf.push(1.0, u1.clone()).unwrap();
        assert_eq!(buf.eval(0.0).unwrap(), u0);
        assert_eq!(buf.eval(1.0).unwrap(), u1);
        let mid = buf.eval(0.25).unwrap();
        for ((m, a), b) in mid.values().iter().zip(u0.values()).zip(u1.values()) {
            assert!((m - (0.75 * a + 0.25 * b)).abs() < 1e-15);
        }
        assert!(matches!(buf.eval(1.5), Err(Error::Range { .. })));
        assert!(matches!(buf.push(1.0, u0), Err(Error::Sequencing(_))));
    }

    #[test]
    fn history_reproduces_linear_in_time_phi() {
        let g = Grid::new(9).unwrap();
        let bump = GridFunction::from_fn(g, |x| x * (1.0 - x));
        let phi = InitialFunction::from_fn(g, 1.0, 0.125, |s, x| s * x * (1.0 - x)).unwrap();
        let buf = HistoryBuffer::from_initial(&phi);
        for tau in [-1.0, -0.77, -0.5, -0.01, 0.0] {
            let v = buf.eval(tau).unwrap();
            for (a, b) in v.values().iter().zip(bump.values()) {
                assert!((a - tau * b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn eviction_keeps_bracketing_entry() {
        let g = Grid::new(3).unwrap();
        let mut buf = HistoryBuffer::default();
        for k in 0..10 {
            buf.push(k as f64, GridFunction::constant(g, k as f64)).unwrap();
        }
        buf.evict_before(4.5);
        assert_eq!(buf.oldest(), Some(4.0));
        assert_eq!(buf.eval(4.5).unwrap().values()[0], 4.5);
    }

    #[test]
    fn heat_step_is_eigenmode_division() {
        let g = Grid::new(63).unwrap();
        let spec = ProblemSpec::heat(g, InitialProfile::sine(1.0));
        let phi = spec.initial_function(0.1).unwrap();
        let buf = HistoryBuffer::from_initial(&phi);
        let u = sine(g);
        let dtau = 1e-3;
        let next = step_quasilinear(&u, &buf, &spec, 0.0, dtau).unwrap();
        let mu1 = crate::grid::discrete_first_eigenvalue(g, 0.0).discrete;
        for (a, b) in next.values().iter().zip(u.values()) {
            assert!((a - b / (1.0 + dtau * mu1)).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_forcing_enters_before_solve() {
        let g = Grid::new(15).unwrap();
        let mut spec = ProblemSpec::heat(g, InitialProfile::Zero);
        spec.h = Forcing::Constant { value: 3.0 };
        let phi = spec.initial_function(0.5).unwrap();
        let buf = HistoryBuffer::from_initial(&phi);
        let u = sine(g);
        let dtau = 1e-2;
        let next = step_quasilinear(&u, &buf, &spec, 0.0, dtau).unwrap();
        let expect = implicit_diffusion_step(&u.map(|v| v + dtau * 3.0), 1.0, dtau);
        assert_eq!(next, expect);
    }

    #[test]
    fn zero_data_stays_zero_in_both_solvers() {
        let g = Grid::new(15).unwrap();
        let spec = ProblemSpec::canonical(g, InitialProfile::Zero);
        let q = solve_quasilinear(&spec, 0.5, 1e-3).unwrap();
        assert!(q.states().iter().all(|s| s.linf() == 0.0));
        let s = solve_semilinear(&spec, 0.5, 1e-3).unwrap();
        assert!(s.trajectory.states().iter().all(|s| s.linf() == 0.0));
    }

    #[test]
    fn heat_decay_matches_exact_solution() {
        let g = Grid::new(255).unwrap();
        let spec = ProblemSpec::heat(g, InitialProfile::sine(1.0));
        let traj = solve_quasilinear(&spec, 0.1, 1e-5).unwrap();
        let (t, last) = traj.last().unwrap();
        assert!((t - 0.1).abs() < 1e-12);
        let exact = (-PI * PI * 0.1).exp();
        assert!((last.linf() - exact).abs() / exact < 1e-3);
    }

    #[test]
    fn quasilinear_records_with_stride() {
        let g = Grid::new(15).unwrap();
        let spec = ProblemSpec::canonical(g, InitialProfile::sine(0.5));
        let phi = spec.initial_function(1e-2).unwrap();
        let traj = solve_quasilinear_with(&spec, &phi, 1.0, 1e-2, &SolveOptions::every(10)).unwrap();
        assert_eq!(traj.len(), 11);
        assert!(traj.diagnostics().iter().all(|d| (1.0..=2.0).contains(&d.coeff)));
    }

    #[test]
    fn blow_up_is_reported_with_time() {
        let g = Grid::new(15).unwrap();
        let mut spec = ProblemSpec::heat(g, InitialProfile::sine(5.0));
        spec.f = Nonlinearity::Polynomial { coeffs: vec![0.0, 0.0, 1.0] };
        spec.lambda = 10.0;
        let phi = spec.initial_function(1e-2).unwrap();
        let (traj, err) = solve_quasilinear_partial(&spec, &phi, 10.0, 1e-3, &SolveOptions::default());
        match err {
            Some(Error::BlowUp { time, linf }) => {
                assert!(time > 0.0 && time < 10.0);
                assert!(linf > BLOWUP_LINF || !linf.is_finite());
                assert!(!traj.is_empty());
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn literal_clock_accumulates_coefficient() {
        let g = Grid::new(15).unwrap();
        let mut spec = ProblemSpec::canonical(g, InitialProfile::sine(1.0));
        spec.a = DiffusionLaw::Constant { value: 2.0 };
        let phi = spec.initial_function(1e-3).unwrap();
        let opts = SolveOptions {
            clock: Clock::Literal,
            ..Default::default()
        };
        let run = solve_semilinear_with(&spec, &phi, 0.5, 1e-3, &opts).unwrap();
        for &(t, a) in run.map.knots() {
            assert!((a - 2.0 * t).abs() < 1e-12);
        }
        assert!(run.map.slope_excess(spec.m, spec.big_m) == 0.0);
    }

    #[test]
    fn run_until_stops_at_first_step_past_target() {
        let g = Grid::new(15).unwrap();
        let spec = ProblemSpec::canonical(g, InitialProfile::sine(1.5));
        let phi = spec.initial_function(1e-3).unwrap();
        let run = solve_semilinear_until(&spec, &phi, 1.3, 1e-3, &SolveOptions::default()).unwrap();
        let knots = run.map.knots();
        assert!(knots[knots.len() - 1].1 >= 1.3);
        assert!(knots[knots.len() - 2].1 < 1.3);
        assert_eq!(run.trajectory.len(), knots.len());
    }

    #[test]
    fn consistent_clock_reproduces_quasilinear_steps() {
        let g = Grid::new(31).unwrap();
        let mut spec = ProblemSpec::canonical(g, InitialProfile::sine(1.0));
        spec.a = DiffusionLaw::Constant { value: 2.0 };
        let dtau = 1e-3;
        let phi = spec.initial_function(dtau).unwrap();
        let q = solve_quasilinear_with(&spec, &phi, 1.0, dtau, &SolveOptions::default()).unwrap();
        let s = solve_semilinear_with(&spec, &phi, 2.0, 2.0 * dtau, &SolveOptions::default()).unwrap();
        for &(t, a) in s.map.knots() {
            assert!((a - t / 2.0).abs() < 1e-12);
        }
        let w = pushforward(&s.trajectory, &s.map, q.stamps()).unwrap();
        let worst = q
            .states()
            .iter()
            .zip(w.states())
            .map(|(a, b)| a.sub(b).l2())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn semilinear_heat_ignores_coefficient() {
        let g = Grid::new(31).unwrap();
        let mut spec = ProblemSpec::canonical(g, InitialProfile::sine(1.0));
        spec.f = Nonlinearity::Zero;
        spec.gamma = 0.0;
        let dt = 1e-3;
        let run = solve_semilinear(&spec, 0.2, dt).unwrap();
        let mu1 = crate::grid::discrete_first_eigenvalue(g, 0.0).discrete;
        for (k, (_, u)) in run.trajectory.iter().enumerate() {
            let amp = (1.0 + dt * mu1).powi(-(k as i32));
            let exact = sine(g).scale(amp);
            assert!(u.sub(&exact).linf() < 1e-13);
        }
        assert!(run.alpha0.t_start <= -0.5 && run.alpha0.t_start >= -1.0);
    }

    #[test]
    fn pushforward_identity_and_dilation() {
        let g = Grid::new(3).unwrap();
        let mut traj = Trajectory::new();
        for k in 0..=4 {
            traj.push(k as f64, GridFunction::constant(g, k as f64), 1.0).unwrap();
        }
        let id = TimeChange::from_knots((0..=4).map(|k| (k as f64, k as f64)).collect()).unwrap();
        let w = pushforward(&traj, &id, &[0.0, 1.0, 2.5]).unwrap();
        assert_eq!(w.states()[2].values()[0], 2.5);
        let dil = TimeChange::from_knots((0..=4).map(|k| (k as f64, 2.0 * k as f64)).collect()).unwrap();
        let w = pushforward(&traj, &dil, &[0.0, 3.0, 8.0]).unwrap();
        assert_eq!(w.states()[1].values()[0], 1.5);
        assert_eq!(w.states()[2].values()[0], 4.0);
        assert!(pushforward(&traj, &dil, &[9.0]).is_err());
    }

    #[test]
    fn concatenation_residual_small_and_first_order() {
        let g = Grid::new(31).unwrap();
        let mut spec = ProblemSpec::heat(g, InitialProfile::sine(1.0));
        spec.m = 1.0;
        spec.big_m = 1.0;
        let res = |dt: f64| {
            let phi = spec.initial_function(dt).unwrap();
            let run = solve_semilinear_with(&spec, &phi, 0.2, dt, &SolveOptions::default()).unwrap();
            concatenation_check(&run.trajectory, &spec, &phi, &run.map, 0.2).unwrap().residual
        };
        let (r1, r2) = (res(2e-3), res(1e-3));
        assert!(r2 < 1e-3);
        assert!(r1 / r2 > 1.7 && r1 / r2 < 2.3, "{r1} {r2}");
    }

    #[test]
    fn concatenation_zero_solution() {
        let g = Grid::new(15).unwrap();
        let spec = ProblemSpec::canonical(g, InitialProfile::Zero);
        let phi = spec.initial_function(1e-2).unwrap();
        let run = solve_semilinear_with(&spec, &phi, 0.5, 1e-2, &SolveOptions::default()).unwrap();
        let r = concatenation_check(&run.trajectory, &spec, &phi, &run.map, 0.5).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn concatenation_with_delay_and_reaction_converges() {
        let g = Grid::new(31).unwrap();
        let spec = ProblemSpec::canonical(g, InitialProfile::sine(1.0));
        let res = |dt: f64| {
            let phi = spec.initial_function(dt).unwrap();
            let run = solve_semilinear_with(&spec, &phi, 3.0, dt, &SolveOptions::default()).unwrap();
            concatenation_check(&run.trajectory, &spec, &phi, &run.map, 3.0).unwrap()
        };
        let (r1, r2) = (res(4e-3), res(2e-3));
        assert!(r2.interval_contributions.len() >= 2);
        assert!(r1.residual / r2.residual > 1.6, "{} {}", r1.residual, r2.residual);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn recorded_coefficient_within_bounds(seed in 0u64..1000, linf in 0.0f64..3.0, gamma in 0.0f64..1.5) {
            let g = Grid::new(15).unwrap();
            let mut spec = ProblemSpec::canonical(g, InitialProfile::RandomModes { seed, n_modes: 4, linf });
            spec.gamma = gamma;
            spec.rho = 0.1;
            let q = solve_quasilinear(&spec, 0.3, 1e-2).unwrap();
            let s = solve_semilinear(&spec, 0.3, 1e-2).unwrap();
            for d in q.diagnostics().iter().chain(s.trajectory.diagnostics()) {
                prop_assert!(d.coeff >= spec.m && d.coeff <= spec.big_m);
            }
        }

        #[test]
        fn delayed_lookups_stay_in_the_past(seed in 0u64..1000, rho in 0.03f64..0.2) {
            let g = Grid::new(9).unwrap();
            let mut spec = ProblemSpec::canonical(g, InitialProfile::RandomModes { seed, n_modes: 3, linf: 1.0 });
            spec.rho = rho;
            let phi = spec.initial_function(1e-2).unwrap();
            let mut solver = QuasilinearSolver::new(&spec, &phi, 1e-2).unwrap();
            for _ in 0..40 {
                let newest = solver.history().newest().unwrap();
                let oldest = solver.history().oldest().unwrap();
                let query = solver.tau() - spec.rho;
                prop_assert!(query <= newest - spec.rho + 1e-12);
                prop_assert!(query >= oldest - 1e-12);
                solver.advance().unwrap();
            }
        }
    }
}
