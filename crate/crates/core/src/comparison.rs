//! Sub- and super-solution envelopes for the semilinear problem.
//!
//! The envelopes solve `u_t = Δu + f±(u)` from the constant data `±K` with
//!
//! ```text
//! f⁻(u) = (λ f(u) - γK - H) / M
//! f⁺(u) = (λ f(u) + γK + H) / m
//! ```
//!
//! where `H` bounds the forcing (zero when there is none).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{implicit_diffusion_step, GridFunction};
use crate::integrator::{SemilinearRun, Trajectory, BLOWUP_LINF};
use crate::model::{InitialFunction, ProblemSpec};
use crate::timechange::TimeChange;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

/// `f⁻` or `f⁺` at a single value.
pub fn envelope_nonlinearity(spec: &ProblemSpec, k: f64, side: Side, u: f64) -> f64 {
    let shift = spec.gamma * k + spec.h.sup_bound();
    let base = spec.lambda * spec.f.eval(u);
    match side {
        Side::Lower => (base - shift) / spec.big_m,
        Side::Upper => (base + shift) / spec.m,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePair {
    pub lower: Trajectory,
    pub upper: Trajectory,
    pub k: f64,
}

fn run_side(
    spec: &ProblemSpec,
    k: f64,
    side: Side,
    t0: f64,
    n_steps: usize,
    dt: f64,
) -> Result<Trajectory> {
    let grid = spec.grid;
    let sign = match side {
        Side::Lower => -1.0,
        Side::Upper => 1.0,
    };
    let mut u = GridFunction::constant(grid, sign * k);
    let mut traj = Trajectory::new();
    traj.push(t0, u.clone(), f64::NAN)?;
    for step in 1..=n_steps {
        let mut rhs = u.clone();
        for v in rhs.values_mut() {
            *v += dt * envelope_nonlinearity(spec, k, side, *v);
        }
        u = implicit_diffusion_step(&rhs, 1.0, dt);
        let t = t0 + step as f64 * dt;
        let linf = u.linf();
        if u.first_non_finite().is_some() || linf > BLOWUP_LINF {
            return Err(Error::BlowUp { time: t, linf });
        }
        traj.push(t, u.clone(), f64::NAN)?;
    }
    Ok(traj)
}

/// Envelopes on `[t0, t0 + n_steps·dt]`. The two sides run in parallel.
pub fn solve_envelope_from(
    spec: &ProblemSpec,
    k: f64,
    t0: f64,
    n_steps: usize,
    dt: f64,
) -> Result<EnvelopePair> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(Error::Parameter(format!("envelope level must be nonnegative, got {k}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    let (lower, upper) = rayon::join(
        || run_side(spec, k, Side::Lower, t0, n_steps, dt),
        || run_side(spec, k, Side::Upper, t0, n_steps, dt),
    );
    Ok(EnvelopePair {
        lower: lower?,
        upper: upper?,
        k,
    })
}

/// Envelopes on `[0, t_end]` from `±k`.
pub fn solve_envelope(spec: &ProblemSpec, k: f64, t_end: f64, dt: f64) -> Result<EnvelopePair> {
    let n = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    solve_envelope_from(spec, k, 0.0, n, dt)
}

/// Largest `max(lower - mid, mid - upper, 0)` over the stamps of `mid` that
/// lie inside both envelopes' ranges; envelopes are interpolated in time.
pub fn check_sandwich(lower: &Trajectory, mid: &Trajectory, upper: &Trajectory) -> f64 {
    let (Some(lo_first), Some(lo_last), Some(up_first), Some(up_last)) = (
        lower.stamps().first(),
        lower.stamps().last(),
        upper.stamps().first(),
        upper.stamps().last(),
    ) else {
        return 0.0;
    };
    let start = lo_first.max(*up_first);
    let end = lo_last.min(*up_last);
    let tol = 1e-9 * (1.0 + end.abs());
    let mut worst = 0.0_f64;
    for (t, u) in mid.iter() {
        if t < start - tol || t > end + tol {
            continue;
        }
        let t = t.clamp(start, end);
        let (Ok(l), Ok(h)) = (lower.interpolate(t), upper.interpolate(t)) else {
            continue;
        };
        for ((&lv, &mv), &hv) in l.values().iter().zip(u.values()).zip(h.values()) {
            worst = worst.max(lv - mv).max(mv - hv);
        }
    }
    worst
}

/// `Kₙ = sup ‖u‖_∞` over `[α⁻¹((n-1)ρ), α⁻¹(nρ)]` for `n = 1..=n_steps`.
/// The recorded stamps bracketing each interval are included, so `Kₙ`
/// bounds the piecewise-linear interpolant on the whole interval.
pub fn stepwise_constants(
    traj: &Trajectory,
    map: &TimeChange,
    rho: f64,
    n_steps: usize,
) -> Result<Vec<f64>> {
    let last = traj.stamps().last().copied().unwrap_or(f64::NEG_INFINITY);
    let mut out = Vec::with_capacity(n_steps);
    for n in 1..=n_steps {
        let a = map.invert((n - 1) as f64 * rho)?;
        let b = map.invert(n as f64 * rho)?;
        if b > last + 1e-9 * (1.0 + last.abs()) {
            return Err(Error::Range {
                what: "trajectory time",
                value: b,
                lo: traj.stamps()[0],
                hi: last,
            });
        }
        out.push(sup_linf_on(traj, a, b));
    }
    Ok(out)
}

fn sup_linf_on(traj: &Trajectory, a: f64, b: f64) -> f64 {
    let stamps = traj.stamps();
    let tol = 1e-12 * (1.0 + b.abs());
    let lo = stamps.partition_point(|&s| s <= a + tol).saturating_sub(1);
    let hi = stamps.partition_point(|&s| s < b - tol).min(stamps.len() - 1);
    traj.diagnostics()[lo..=hi]
        .iter()
        .map(|d| d.linf)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalCheck {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    /// Level used for the envelopes on this interval.
    pub k: f64,
    pub violation: f64,
}

/// Envelope report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    /// `sup |φ|`
    pub k: f64,
    /// `Kₙ` from [`stepwise_constants`] over the intervals covered.
    pub k_sequence: Vec<f64>,
    pub max_violation: f64,
    pub intervals: Vec<IntervalCheck>,
}

/// `sup ‖·‖_∞` of the history over `τ ∈ [tau_lo, tau_hi]`, combining the
/// samples of `φ` for `τ ≤ 0` with the recorded states for `τ ≥ 0`.
fn history_sup(phi: &InitialFunction, run: &SemilinearRun, tau_lo: f64, tau_hi: f64) -> Result<f64> {
    let mut k = 0.0_f64;
    if tau_lo <= 0.0 {
        let s = phi.stamps();
        let lo = s.partition_point(|&x| x <= tau_lo).saturating_sub(1);
        let hi = s.partition_point(|&x| x < tau_hi.min(0.0)).min(s.len() - 1);
        for st in &phi.states()[lo..=hi] {
            k = k.max(st.linf());
        }
    }
    if tau_hi >= 0.0 {
        let a = run.map.invert(tau_lo.max(0.0))?;
        let b = run.map.invert(tau_hi)?;
        k = k.max(sup_linf_on(&run.trajectory, a, b));
    }
    Ok(k)
}

/// Sandwich check re-based on successive delay intervals.
///
/// Interval `n` starts at a recorded stamp `t₀` and ends at the last stamp
/// `t₁` with `α(t₁) ≤ α(t₀) + ρ`; the next interval starts at `t₁`. On each
/// interval the envelopes start from `±K` where `K` bounds the history over
/// `τ ∈ [α(t₀) - ρ, α(t₀)]`, which covers both the data at `t₀` and every
/// delayed value the mid solution sees before `t₁`. Intervals are added
/// until `α` reaches `n_intervals·ρ`.
pub fn rebased_sandwich(
    spec: &ProblemSpec,
    phi: &InitialFunction,
    run: &SemilinearRun,
    n_intervals: usize,
    dt: f64,
) -> Result<SandwichReport> {
    let traj = &run.trajectory;
    let stamps = traj.stamps();
    let knots = run.map.knots();
    if stamps.len() != knots.len() {
        return Err(Error::Parameter(
            "re-based sandwich needs a trajectory recorded at every step".into(),
        ));
    }
    let target = n_intervals as f64 * spec.rho;
    if knots.last().map(|k| k.1).unwrap_or(0.0) < target - 1e-9 {
        return Err(Error::Range {
            what: "time change",
            value: target,
            lo: 0.0,
            hi: knots.last().map(|k| k.1).unwrap_or(0.0),
        });
    }
    let mut intervals = Vec::new();
    let mut i0 = 0usize;
    let mut max_violation = 0.0_f64;
    while knots[i0].1 < target - 1e-9 && i0 + 1 < knots.len() {
        let tau0 = knots[i0].1;
        let limit = tau0 + spec.rho + 1e-12 * (1.0 + tau0.abs());
        let i1 = (knots.partition_point(|k| k.1 <= limit) - 1).max(i0 + 1);
        let k = history_sup(phi, run, tau0 - spec.rho, tau0)?;
        let pair = solve_envelope_from(spec, k, stamps[i0], i1 - i0, dt)?;
        let segment = slice(traj, i0, i1)?;
        let violation = check_sandwich(&pair.lower, &segment, &pair.upper);
        max_violation = max_violation.max(violation);
        intervals.push(IntervalCheck {
            index: intervals.len() + 1,
            t_start: stamps[i0],
            t_end: stamps[i1],
            tau_start: tau0,
            tau_end: knots[i1].1,
            k,
            violation,
        });
        i0 = i1;
    }
    let covered = (knots[i0].1 / spec.rho + 1e-9).floor() as usize;
    let k_sequence = stepwise_constants(traj, &run.map, spec.rho, covered.min(n_intervals))?;
    Ok(SandwichReport {
        k: phi.sup_linf(),
        k_sequence,
        max_violation,
        intervals,
    })
}

fn slice(traj: &Trajectory, i0: usize, i1: usize) -> Result<Trajectory> {
    let mut out = Trajectory::new();
    for i in i0..=i1 {
        out.push(traj.stamps()[i], traj.states()[i].clone(), traj.diagnostics()[i].coeff)?;
    }
    Ok(out)
}
