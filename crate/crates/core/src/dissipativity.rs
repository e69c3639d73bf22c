//! Structural and dissipativity conditions, absorbing radii and the steady
//! envelope `θ`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{discrete_first_eigenvalue, solve_symmetric_toeplitz, Grid, GridFunction};
use crate::integrator::Trajectory;
use crate::model::{ProblemSpec, StructuralConstants};

/// Slack below which a condition-(S) scan still counts as holding; absorbs
/// rounding when `C₁` is the exact supremum.
pub const S_TOLERANCE: f64 = 1e-9;

/// Relative enlargement applied to the absorbing radius.
pub const K_ABS_MARGIN: f64 = 0.01;

/// Default fraction of trailing stamps used as the limsup window.
pub const LIMSUP_WINDOW: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRange {
    pub half_width: f64,
    pub step: f64,
}

impl Default for ScanRange {
    fn default() -> Self {
        ScanRange {
            half_width: 10.0,
            step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SCheck {
    pub holds: bool,
    /// `max_u [u f(u) + ν C₀ u² - C₁ |u|]` over the scan and both `ν`.
    pub worst_margin: f64,
    pub witness: f64,
    pub nu: f64,
}

fn s_slack(spec: &ProblemSpec, c0: f64, c1: f64, nu: f64, u: f64) -> f64 {
    u * spec.f.eval(u) + nu * c0 * u * u - c1 * u.abs()
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Condition (S) on a dense symmetric scan for both `ν = m/λ` and `ν = M/λ`,
/// with golden-section refinement around the worst scan point.
pub fn check_s(spec: &ProblemSpec, c0: f64, c1: f64, scan: ScanRange) -> Result<SCheck> {
    if !(scan.half_width > 0.0 && scan.step > 0.0 && scan.step <= scan.half_width) {
        return Err(Error::Parameter(format!(
            "scan needs 0 < step <= half_width, got {scan:?}"
        )));
    }
    let n = (scan.half_width / scan.step).round() as i64;
    let mut worst = SCheck {
        holds: true,
        worst_margin: f64::NEG_INFINITY,
        witness: 0.0,
        nu: f64::NAN,
    };
    for nu in spec.nu_values() {
        let g = |u: f64| s_slack(spec, c0, c1, nu, u);
        let (mut best_u, mut best) = (0.0, f64::NEG_INFINITY);
        for i in -n..=n {
            let u = i as f64 * scan.step;
            let v = g(u);
            if v > best {
                best = v;
                best_u = u;
            }
        }
        let lo = (best_u - scan.step).max(-scan.half_width);
        let hi = (best_u + scan.step).min(scan.half_width);
        let (u_ref, v_ref) = golden_max(g, lo, hi);
        if v_ref > best {
            best = v_ref;
            best_u = u_ref;
        }
        if best > worst.worst_margin {
            worst.worst_margin = best;
            worst.witness = best_u;
            worst.nu = nu;
        }
    }
    worst.holds = worst.worst_margin <= S_TOLERANCE;
    Ok(worst)
}

/// Condition (D) with `m` in the decay exponent, and with `M` as used by the
/// absorbing estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DCheck {
    pub omega: f64,
    pub omega_discrete: f64,
    /// `e^{-ωρ/m} + γ/(ωm)`
    pub d_lhs_stated: f64,
    /// `e^{-ωρ/M} + γ/(ωm)`
    pub d_lhs_derived: f64,
    pub stated_holds: bool,
    pub derived_holds: bool,
}

pub fn check_d(spec: &ProblemSpec, c0: f64) -> Result<DCheck> {
    let ev = discrete_first_eigenvalue(spec.grid, c0);
    let omega = ev.continuum;
    if !(omega > 0.0) {
        return Err(Error::Condition(format!(
            "first eigenvalue pi^2 + C0 = {omega} is not positive; no exponential decay"
        )));
    }
    let coupling = spec.gamma / (omega * spec.m);
    let d_lhs_stated = (-omega * spec.rho / spec.m).exp() + coupling;
    let d_lhs_derived = (-omega * spec.rho / spec.big_m).exp() + coupling;
    Ok(DCheck {
        omega,
        omega_discrete: ev.discrete,
        d_lhs_stated,
        d_lhs_derived,
        stated_holds: d_lhs_stated < 1.0,
        derived_holds: d_lhs_derived < 1.0,
    })
}

/// `(C₁/ω) / (1 - e^{-ωρ/M} - γ/(mω)) · (1 + margin)`.
pub fn compute_k_abs(c1: f64, omega: f64, rho: f64, gamma: f64, m: f64, big_m: f64) -> Result<f64> {
    let denom = 1.0 - (-omega * rho / big_m).exp() - gamma / (m * omega);
    if !(omega > 0.0) || !(denom > 0.0) {
        return Err(Error::Condition(format!(
            "e^(-omega rho/M) + gamma/(m omega) = {} is not below 1; no finite absorbing radius",
            1.0 - denom
        )));
    }
    Ok((c1 / omega) / denom * (1.0 + K_ABS_MARGIN))
}

/// `e^{-ωρ/M} K + (γK/m + C₁)/ω < K`.
pub fn k_abs_resubstitutes(k: f64, c1: f64, omega: f64, rho: f64, gamma: f64, m: f64, big_m: f64) -> bool {
    (-omega * rho / big_m).exp() * k + (gamma * k / m + c1) / omega < k
}

/// `(γK/M + C₁, γK/m + C₁)`
pub fn c1_star_pair(spec: &ProblemSpec, k: f64, c1: f64) -> (f64, f64) {
    (spec.gamma * k / spec.big_m + c1, spec.gamma * k / spec.m + c1)
}

/// Discrete solution of `-θ″ + C₀θ = C₁*`, `θ(0) = θ(1) = 0`.
pub fn solve_theta(c0: f64, c1_star: f64, grid: Grid) -> Result<GridFunction> {
    if !(c0 >= 0.0) {
        return Err(Error::Parameter(format!("C0 must be nonnegative, got {c0}")));
    }
    let h2 = grid.dx() * grid.dx();
    let rhs = vec![c1_star; grid.n_interior()];
    let values = solve_symmetric_toeplitz(2.0 / h2 + c0, -1.0 / h2, &rhs);
    GridFunction::new(grid, values)
}

pub fn theta_closed_form(c0: f64, c1_star: f64, x: f64) -> f64 {
    if c0 == 0.0 {
        c1_star * x * (1.0 - x) / 2.0
    } else {
        let s = c0.sqrt();
        c1_star / c0 * (1.0 - (s * (x - 0.5)).cosh() / (s / 2.0).cosh())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaBound {
    /// `max(|u| - θ)` over the checked stamps, clipped at zero.
    pub max_violation: f64,
    pub first_violation_stamp: Option<f64>,
    /// First stamp of the checked window.
    pub window_start: Option<f64>,
}

/// Pointwise envelope check: every stamp when `phi_inside`, otherwise the
/// trailing [`LIMSUP_WINDOW`] fraction of stamps.
pub fn check_theta_bound(traj: &Trajectory, theta: &GridFunction, phi_inside: bool) -> ThetaBound {
    check_theta_bound_window(traj, theta, phi_inside, LIMSUP_WINDOW)
}

pub fn check_theta_bound_window(
    traj: &Trajectory,
    theta: &GridFunction,
    phi_inside: bool,
    window: f64,
) -> ThetaBound {
    let n = traj.len();
    let start = if phi_inside {
        0
    } else {
        let keep = ((n as f64) * window.clamp(0.0, 1.0)).ceil() as usize;
        n - keep.min(n)
    };
    let mut out = ThetaBound {
        max_violation: 0.0,
        first_violation_stamp: None,
        window_start: traj.stamps().get(start).copied(),
    };
    for (t, u) in traj.iter().skip(start) {
        let excess = u
            .values()
            .iter()
            .zip(theta.values())
            .map(|(v, th)| v.abs() - th)
            .fold(f64::NEG_INFINITY, f64::max);
        if excess > 0.0 {
            out.max_violation = out.max_violation.max(excess);
            out.first_violation_stamp.get_or_insert(t);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbsorbingEntry {
    /// First stamp from which `‖u‖_∞ ≤ K_abs` at every later stamp.
    pub t_entry_linf: Option<f64>,
    /// First stamp from which `‖u‖_{H¹₀} ≤ k_h10` at every later stamp.
    pub t_entry_h10: Option<f64>,
    /// Empirical `sup ‖u‖_{H¹₀}` after `t_entry_linf`.
    pub k_h10: Option<f64>,
}

fn entry_time(traj: &Trajectory, ok: impl Fn(usize) -> bool) -> Option<f64> {
    let n = traj.len();
    if n == 0 || !ok(n - 1) {
        return None;
    }
    let mut i = n - 1;
    while i > 0 && ok(i - 1) {
        i -= 1;
    }
    Some(traj.stamps()[i])
}

pub fn absorbing_norm_bounds(traj: &Trajectory, k_abs: f64) -> AbsorbingEntry {
    let d = traj.diagnostics();
    let t_entry_linf = entry_time(traj, |i| d[i].linf <= k_abs);
    let k_h10 = t_entry_linf.map(|t| {
        traj.stamps()
            .iter()
            .zip(d)
            .filter(|(s, _)| **s >= t)
            .map(|(_, x)| x.h10)
            .fold(0.0, f64::max)
    });
    let t_entry_h10 = k_h10.and_then(|k| entry_time(traj, |i| d[i].h10 <= k));
    AbsorbingEntry {
        t_entry_linf,
        t_entry_h10,
        k_h10,
    }
}

/// Conditions, constants and `θ` for one problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipativityReport {
    pub c0: f64,
    pub c1: f64,
    pub omega: f64,
    pub omega_discrete: f64,
    pub s_holds: bool,
    pub s_margin: f64,
    pub s_witness: f64,
    pub d_lhs_stated: f64,
    pub d_lhs_derived: f64,
    pub d_stated_holds: bool,
    pub d_derived_holds: bool,
    pub k_abs: Option<f64>,
    pub k_abs_resubstitutes: Option<bool>,
    /// `(γK/M + C₁, γK/m + C₁)` at `K = K_abs`.
    pub c1_star_pair: Option<(f64, f64)>,
    pub theta_center: Option<f64>,
    pub theta_max: Option<f64>,
    #[serde(skip)]
    pub theta: Option<GridFunction>,
    pub diagnostics: Vec<String>,
}

/// Full report. `c1 = None` takes the closed-form constant of the reaction
/// family.
pub fn dissipativity_report(
    spec: &ProblemSpec,
    c0: f64,
    c1: Option<f64>,
    scan: ScanRange,
) -> Result<DissipativityReport> {
    let c1 = match c1 {
        Some(c) => c,
        None => StructuralConstants::derive(spec, c0)
            .map(|s| s.c1)
            .ok_or_else(|| {
                Error::Condition(format!(
                    "no closed-form C1 for this reaction with C0 = {c0}; supply c1"
                ))
            })?,
    };
    let s = check_s(spec, c0, c1, scan)?;
    let d = check_d(spec, c0)?;
    let mut diagnostics = Vec::new();
    if !s.holds {
        diagnostics.push(format!(
            "condition (S) fails: margin {} at u = {} (nu = {})",
            s.worst_margin, s.witness, s.nu
        ));
    }
    if !d.stated_holds {
        diagnostics.push(format!("condition (D) fails: {} >= 1", d.d_lhs_stated));
    }
    let k_abs = match compute_k_abs(c1, d.omega, spec.rho, spec.gamma, spec.m, spec.big_m) {
        Ok(k) => Some(k),
        Err(e) => {
            diagnostics.push(e.to_string());
            None
        }
    };
    let pair = k_abs.map(|k| c1_star_pair(spec, k, c1));
    let theta = match pair {
        Some((_, worst)) if c0 >= 0.0 => Some(solve_theta(c0, worst, spec.grid)?),
        _ => None,
    };
    Ok(DissipativityReport {
        c0,
        c1,
        omega: d.omega,
        omega_discrete: d.omega_discrete,
        s_holds: s.holds,
        s_margin: s.worst_margin,
        s_witness: s.witness,
        d_lhs_stated: d.d_lhs_stated,
        d_lhs_derived: d.d_lhs_derived,
        d_stated_holds: d.stated_holds,
        d_derived_holds: d.derived_holds,
        k_abs,
        k_abs_resubstitutes: k_abs
            .map(|k| k_abs_resubstitutes(k, c1, d.omega, spec.rho, spec.gamma, spec.m, spec.big_m)),
        c1_star_pair: pair,
        theta_center: pair.map(|(_, c)| theta_closed_form(c0, c, 0.5)),
        theta_max: theta.as_ref().map(GridFunction::linf),
        theta,
        diagnostics,
    })
}

/// `π² + C₀`
pub fn omega(c0: f64) -> f64 {
    PI * PI + c0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_chafee_constants, InitialProfile, Nonlinearity};
    use proptest::prelude::*;

    fn canonical() -> ProblemSpec {
        ProblemSpec::canonical(Grid::new(255).unwrap(), InitialProfile::Zero)
    }

    #[test]
    fn linear_decay_has_zero_margin() {
        let mut spec = canonical();
        spec.f = Nonlinearity::Linear { slope: -1.0 };
        spec.big_m = 1.0;
        let s = check_s(&spec, 1.0, 0.0, ScanRange::default()).unwrap();
        assert!(s.holds);
        assert_eq!(s.worst_margin, 0.0);
    }

    #[test]
    fn chafee_constant_is_tight() {
        let spec = canonical();
        let c1 = derive_chafee_constants(1.0, 2.0);
        assert!((c1 - 2.0).abs() < 1e-14);
        let s = check_s(&spec, 1.0, c1, ScanRange::default()).unwrap();
        assert!(s.holds);
        assert!(s.worst_margin.abs() <= 1e-9, "{}", s.worst_margin);
        // the slack vanishes at u = 0 and touches zero again at |u| = 1
        assert!(s.witness == 0.0 || (s.witness.abs() - 1.0).abs() < 1e-6, "{s:?}");
        let at_one = 1.0 * spec.f.eval(1.0) + 2.0 * 1.0 - c1;
        assert!(at_one.abs() < 1e-14);
        let smaller = check_s(&spec, 1.0, c1 * 0.999, ScanRange::default()).unwrap();
        assert!(!smaller.holds);
    }

    #[test]
    fn quadratic_fails_at_edge() {
        let mut spec = canonical();
        spec.f = Nonlinearity::Polynomial { coeffs: vec![0.0, 0.0, 1.0] };
        let s = check_s(&spec, 1.0, 1.0, ScanRange::default()).unwrap();
        assert!(!s.holds);
        assert!((s.witness - 10.0).abs() < 1e-9);
    }

    #[test]
    fn canonical_conditions() {
        let spec = canonical();
        let d = check_d(&spec, 1.0).unwrap();
        assert_eq!(d.omega, PI * PI + 1.0);
        let expect = (-(PI * PI + 1.0)).exp() + 1.0 / (PI * PI + 1.0);
        assert!((d.d_lhs_stated - expect).abs() < 1e-15);
        assert!((d.d_lhs_stated - 0.0920).abs() < 1e-4);
        assert!(d.stated_holds && d.derived_holds);
        assert!(d.omega_discrete <= d.omega);
    }

    #[test]
    fn d_boundary_is_failing() {
        let mut spec = canonical();
        let w = PI * PI + 1.0;
        spec.gamma = w * spec.m * (1.0 - (-w * spec.rho / spec.m).exp());
        let d = check_d(&spec, 1.0).unwrap();
        assert!((d.d_lhs_stated - 1.0).abs() < 1e-12);
        spec.gamma *= 1.0 + 1e-12;
        assert!(!check_d(&spec, 1.0).unwrap().stated_holds);
    }

    #[test]
    fn d_vanishing_coupling_holds() {
        let mut spec = canonical();
        spec.gamma = 0.0;
        for rho in [1e-3, 1.0, 50.0] {
            spec.rho = rho;
            let d = check_d(&spec, 1.0).unwrap();
            assert!(d.stated_holds && d.derived_holds);
        }
    }

    #[test]
    fn d_rejects_nonpositive_omega() {
        let spec = canonical();
        assert!(matches!(check_d(&spec, -PI * PI), Err(Error::Condition(_))));
    }

    #[test]
    fn k_abs_examples() {
        let w = PI * PI + 1.0;
        assert_eq!(compute_k_abs(0.0, w, 1.0, 1.0, 1.0, 1.0).unwrap(), 0.0);
        let k = compute_k_abs(0.3849, w, 1.0, 1.0, 1.0, 1.0).unwrap();
        let by_hand = (0.3849 / w) / (1.0 - (-w).exp() - 1.0 / w) * 1.01;
        assert!((k - by_hand).abs() < 1e-15);
        assert!((k - 0.0394).abs() < 5e-5);
        assert!(k_abs_resubstitutes(k, 0.3849, w, 1.0, 1.0, 1.0, 1.0));
        assert!(compute_k_abs(1.0, w, 1.0, 20.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn canonical_report() {
        let spec = canonical();
        let r = dissipativity_report(&spec, 1.0, None, ScanRange::default()).unwrap();
        assert_eq!(r.c1, 2.0);
        let k = r.k_abs.unwrap();
        assert!((k - 0.2057).abs() < 1e-3, "{k}");
        assert_eq!(r.k_abs_resubstitutes, Some(true));
        let (lo, hi) = r.c1_star_pair.unwrap();
        assert!(lo < hi);
        let th = r.theta_center.unwrap();
        assert!((th - hi * (1.0 - 1.0 / 0.5f64.cosh())).abs() < 1e-12);
        assert!(r.diagnostics.is_empty());
    }

    #[test]
    fn theta_spot_values() {
        let g = Grid::new(255).unwrap();
        let mid = 127;
        assert!((g.x(mid) - 0.5).abs() < 1e-15);
        let t = solve_theta(0.0, 1.0, g).unwrap();
        assert!((t.values()[mid] - 0.125).abs() < 1e-12);
        let t = solve_theta(0.0, 8.0, g).unwrap();
        assert!((t.values()[mid] - 1.0).abs() < 1e-12);
        let t = solve_theta(1.0, 1.0, g).unwrap();
        assert!((t.values()[mid] - (1.0 - 1.0 / 0.5f64.cosh())).abs() < 1e-5);
        let worst = g
            .nodes()
            .zip(t.values())
            .map(|(x, v)| (v - theta_closed_form(1.0, 1.0, x)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-4);
    }

    #[test]
    fn theta_converges_second_order() {
        let err = |n: usize| {
            let g = Grid::new(n).unwrap();
            let t = solve_theta(1.0, 2.2, g).unwrap();
            g.nodes()
                .zip(t.values())
                .map(|(x, v)| (v - theta_closed_form(1.0, 2.2, x)).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(15), err(31), err(63));
        assert!(e1 / e2 >= 3.5 && e2 / e3 >= 3.5, "{e1} {e2} {e3}");
    }

    #[test]
    fn theta_bound_trivial_cases() {
        let g = Grid::new(31).unwrap();
        let theta = solve_theta(1.0, 1.0, g).unwrap();
        let mut traj = Trajectory::new();
        traj.push(0.0, GridFunction::zeros(g), 1.0).unwrap();
        traj.push(1.0, theta.clone(), 1.0).unwrap();
        traj.push(2.0, theta.scale(-1.0), 1.0).unwrap();
        let b = check_theta_bound(&traj, &theta, true);
        assert_eq!(b.max_violation, 0.0);
        assert_eq!(b.first_violation_stamp, None);
        traj.push(3.0, theta.scale(1.5), 1.0).unwrap();
        let b = check_theta_bound(&traj, &theta, true);
        assert!((b.max_violation - 0.5 * theta.linf()).abs() < 1e-15);
        assert_eq!(b.first_violation_stamp, Some(3.0));
        let tail = check_theta_bound(&traj, &theta, false);
        assert_eq!(tail.window_start, Some(3.0));
    }

    #[test]
    fn absorption_of_heat_decay() {
        let g = Grid::new(255).unwrap();
        let spec = ProblemSpec::heat(g, InitialProfile::sine(10.0));
        let traj = crate::integrator::solve_quasilinear(&spec, 0.5, 1e-4).unwrap();
        let e = absorbing_norm_bounds(&traj, 1.0);
        let t = e.t_entry_linf.unwrap();
        let exact = 10f64.ln() / (PI * PI);
        assert!((t - exact).abs() / exact < 0.05, "{t} vs {exact}");
        assert!(e.t_entry_h10.unwrap() <= t);
        let inside = absorbing_norm_bounds(&traj, 20.0);
        assert_eq!(inside.t_entry_linf, Some(0.0));
        assert_eq!(inside.t_entry_h10, Some(0.0));
    }

    #[test]
    fn blow_up_reports_non_entry() {
        let g = Grid::new(15).unwrap();
        let mut spec = ProblemSpec::heat(g, InitialProfile::sine(5.0));
        spec.f = Nonlinearity::Polynomial { coeffs: vec![0.0, 0.0, 1.0] };
        spec.lambda = 10.0;
        let phi = spec.initial_function(1e-2).unwrap();
        let (traj, err) = crate::integrator::solve_quasilinear_partial(
            &spec,
            &phi,
            10.0,
            1e-3,
            &Default::default(),
        );
        assert!(err.unwrap().is_blow_up());
        let e = absorbing_norm_bounds(&traj, 1.0);
        assert_eq!(e.t_entry_linf, None);
        assert_eq!(e.k_h10, None);
    }

    proptest! {
        #[test]
        fn s_monotone_in_c1(c1 in 0.0f64..4.0, extra in 0.0f64..2.0) {
            let spec = ProblemSpec::canonical(Grid::new(7).unwrap(), InitialProfile::Zero);
            let scan = ScanRange { half_width: 3.0, step: 1e-2 };
            let a = check_s(&spec, 1.0, c1, scan).unwrap();
            let b = check_s(&spec, 1.0, c1 + extra, scan).unwrap();
            prop_assert!(!a.holds || b.holds);
        }

        #[test]
        fn k_abs_fixed_point_consistency(
            c1 in 0.01f64..5.0,
            c0 in 0.0f64..5.0,
            gamma in 0.0f64..3.0,
            rho in 0.1f64..3.0,
        ) {
            let w = PI * PI + c0;
            if let Ok(k) = compute_k_abs(c1, w, rho, gamma, 1.0, 2.0) {
                prop_assert!(k_abs_resubstitutes(k, c1, w, rho, gamma, 1.0, 2.0));
                // the smaller C₁* member is dominated by the larger one
                let lhs = (-w * rho / 2.0).exp() * k + (gamma * k / 2.0 + c1) / w;
                prop_assert!(lhs < k);
            }
        }

        #[test]
        fn theta_nonnegative_and_symmetric(c0 in 0.0f64..20.0, c1 in 0.0f64..10.0) {
            let g = Grid::new(63).unwrap();
            let t = solve_theta(c0, c1, g).unwrap();
            let v = t.values();
            for i in 0..v.len() {
                prop_assert!(v[i] >= 0.0);
                prop_assert!((v[i] - v[v.len() - 1 - i]).abs() <= 1e-12 * (1.0 + v[i].abs()));
            }
        }
    }
}
