//! Finite-bundle surrogate for the multivalued semiflow and its attractor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::integrator::{QuasilinearSolver, Trajectory};
use crate::model::{InitialFunction, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    L2,
    H10,
    Linf,
}

impl NormKind {
    pub fn of(self, u: &GridFunction) -> f64 {
        match self {
            NormKind::L2 => u.l2(),
            NormKind::H10 => u.h10(),
            NormKind::Linf => u.linf(),
        }
    }
}

/// Compare states at segment endpoints or as whole `ρ`-segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Endpoint,
    Segment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Metric {
    pub norm: NormKind,
    pub granularity: Granularity,
}

impl Metric {
    pub fn endpoint(norm: NormKind) -> Self {
        Metric {
            norm,
            granularity: Granularity::Endpoint,
        }
    }

    pub fn segment(norm: NormKind) -> Self {
        Metric {
            norm,
            granularity: Granularity::Segment,
        }
    }

    pub fn distance(&self, a: &MemberState, b: &MemberState) -> f64 {
        match self.granularity {
            Granularity::Endpoint => self.norm.of(&a.endpoint.sub(&b.endpoint)),
            Granularity::Segment => a
                .segment
                .iter()
                .zip(&b.segment)
                .map(|(x, y)| self.norm.of(&x.sub(y)))
                .fold(0.0, f64::max),
        }
    }

    pub fn size(&self, a: &MemberState) -> f64 {
        match self.granularity {
            Granularity::Endpoint => self.norm.of(&a.endpoint),
            Granularity::Segment => a.segment.iter().map(|x| self.norm.of(x)).fold(0.0, f64::max),
        }
    }
}

/// One member's state at a snapshot: the endpoint `w(τ)` and samples of the
/// segment `w(τ + σ)`, `σ ∈ [-ρ, 0]`, ordered from `σ = -ρ` to `σ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberState {
    pub member: usize,
    pub endpoint: GridFunction,
    pub segment: Vec<GridFunction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleSnapshot {
    pub stamp: f64,
    pub states: Vec<MemberState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleOptions {
    pub dtau: f64,
    /// Number of segment samples per snapshot (at least 2).
    pub segment_samples: usize,
}

impl Default for BundleOptions {
    fn default() -> Self {
        BundleOptions {
            dtau: crate::integrator::DEFAULT_DTAU,
            segment_samples: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BundleRun {
    pub spec: ProblemSpec,
    pub members: Vec<InitialFunction>,
    pub snapshots: Vec<BundleSnapshot>,
    pub dtau: f64,
    pub snap_every: f64,
}

impl BundleRun {
    pub fn grid(&self) -> Grid {
        self.spec.grid
    }

    pub fn stamps(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.stamp).collect()
    }

    /// Endpoint path of one member at the snapshot stamps.
    pub fn member_trajectory(&self, member: usize) -> Result<Trajectory> {
        let mut traj = Trajectory::new();
        for snap in &self.snapshots {
            let st = snap
                .states
                .iter()
                .find(|s| s.member == member)
                .ok_or_else(|| Error::Parameter(format!("no bundle member {member}")))?;
            let coeff = crate::model::eval_diffusion(&self.spec, &st.endpoint);
            traj.push(snap.stamp, st.endpoint.clone(), coeff)?;
        }
        Ok(traj)
    }

    /// Index of the first snapshot of the trailing `window_fraction`.
    pub fn window_start(&self, window_fraction: f64) -> Result<usize> {
        if !(window_fraction > 0.0 && window_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "window fraction must lie in (0, 1), got {window_fraction}"
            )));
        }
        let n = self.snapshots.len();
        let keep = ((n as f64) * window_fraction).ceil() as usize;
        Ok(n - keep.min(n))
    }
}

fn capture(
    solver: &QuasilinearSolver<'_>,
    member: usize,
    rho: f64,
    samples: usize,
) -> Result<MemberState> {
    let tau = solver.tau();
    let segment = (0..samples)
        .map(|j| {
            let sigma = -rho + rho * j as f64 / (samples - 1) as f64;
            if j + 1 == samples {
                Ok(solver.state().clone())
            } else {
                solver.history().eval(tau + sigma)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MemberState {
        member,
        endpoint: solver.state().clone(),
        segment,
    })
}

fn run_member(
    phi: &InitialFunction,
    member: usize,
    spec: &ProblemSpec,
    n_steps: usize,
    stride: usize,
    opts: &BundleOptions,
) -> Result<Vec<MemberState>> {
    let mut solver = QuasilinearSolver::new(spec, phi, opts.dtau)?;
    let mut out = vec![capture(&solver, member, spec.rho, opts.segment_samples)?];
    for k in 1..=n_steps {
        solver.advance()?;
        if k % stride == 0 {
            out.push(capture(&solver, member, spec.rho, opts.segment_samples)?);
        }
    }
    Ok(out)
}

/// Integrate every member with the quasilinear solver on `[0, t_end]` and
/// snapshot at multiples of `snap_every`. Members run in parallel; results
/// are merged in member order.
pub fn run_bundle(
    members: &[InitialFunction],
    spec: &ProblemSpec,
    t_end: f64,
    snap_every: f64,
    opts: &BundleOptions,
) -> Result<BundleRun> {
    if !spec.h.is_zero() {
        return Err(Error::Parameter("bundles require an autonomous problem (h = 0)".into()));
    }
    if members.is_empty() {
        return Err(Error::Parameter("bundle needs at least one member".into()));
    }
    if opts.segment_samples < 2 {
        return Err(Error::Parameter("segment needs at least two samples".into()));
    }
    if !(opts.dtau > 0.0 && snap_every >= opts.dtau && t_end >= 0.0) {
        return Err(Error::Parameter(format!(
            "need 0 < dtau <= snap_every and t_end >= 0, got dtau = {}, snap_every = {snap_every}, t_end = {t_end}",
            opts.dtau
        )));
    }
    let errs = crate::model::validate_spec(spec);
    let fatal: Vec<String> = errs.into_iter().filter(|d| !d.contains("clamping")).collect();
    if !fatal.is_empty() {
        return Err(Error::Validation(fatal));
    }
    let stride = ((snap_every / opts.dtau).round() as usize).max(1);
    let n_snaps = ((t_end / (stride as f64 * opts.dtau)) + 1e-9).floor() as usize;
    let n_steps = n_snaps * stride;
    let per_member: Vec<Vec<MemberState>> = members
        .par_iter()
        .enumerate()
        .map(|(i, phi)| {
            run_member(phi, i, spec, n_steps, stride, opts).map_err(|e| Error::Member {
                member: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let snapshots = (0..=n_snaps)
        .map(|j| BundleSnapshot {
            stamp: (j * stride) as f64 * opts.dtau,
            states: per_member.iter().map(|states| states[j].clone()).collect(),
        })
        .collect();
    Ok(BundleRun {
        spec: spec.clone(),
        members: members.to_vec(),
        snapshots,
        dtau: opts.dtau,
        snap_every: stride as f64 * opts.dtau,
    })
}

/// `sup_{a ∈ A} min_{b ∈ B} d(a, b)`.
pub fn hausdorff_semidist(a: &BundleSnapshot, b: &BundleSnapshot, metric: Metric) -> Result<f64> {
    if b.states.is_empty() {
        return Err(Error::Parameter("semidistance to an empty set".into()));
    }
    Ok(a.states
        .iter()
        .map(|x| {
            b.states
                .iter()
                .map(|y| metric.distance(x, y))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max))
}

/// Semidistance between finite sets of grid functions.
pub fn hausdorff_semidist_states(a: &[GridFunction], b: &[GridFunction], norm: NormKind) -> Result<f64> {
    if b.is_empty() {
        return Err(Error::Parameter("semidistance to an empty set".into()));
    }
    Ok(a.iter()
        .map(|x| b.iter().map(|y| norm.of(&x.sub(y))).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max))
}

/// Default clustering radius: ten times the scheme's error scale.
pub fn default_cluster_radius(dtau: f64, dx: f64) -> f64 {
    10.0 * (dtau + dx * dx)
}

/// Endpoint states of the trailing window, greedily merged in `l2`: states
/// are visited from the latest stamp backwards and kept only if no kept
/// representative lies within `eps`.
pub fn omega_limit_estimate(
    run: &BundleRun,
    window_fraction: f64,
    eps: Option<f64>,
) -> Result<Vec<GridFunction>> {
    let start = run.window_start(window_fraction)?;
    let count = run.snapshots.len() - start;
    if count < 10 {
        return Err(Error::Parameter(format!(
            "trailing window holds {count} snapshots; at least 10 needed"
        )));
    }
    let eps = eps.unwrap_or_else(|| default_cluster_radius(run.dtau, run.grid().dx()));
    let mut reps: Vec<GridFunction> = Vec::new();
    for snap in run.snapshots[start..].iter().rev() {
        for st in &snap.states {
            if !reps.iter().any(|r| r.sub(&st.endpoint).l2() < eps) {
                reps.push(st.endpoint.clone());
            }
        }
    }
    Ok(reps)
}

/// Earliest snapshot stamp from which every member stays within `radius`.
pub fn absorption_time(run: &BundleRun, radius: f64, metric: Metric) -> Option<f64> {
    let inside = |s: &BundleSnapshot| s.states.iter().all(|m| metric.size(m) <= radius);
    let n = run.snapshots.len();
    if n == 0 || !inside(&run.snapshots[n - 1]) {
        return None;
    }
    let mut i = n - 1;
    while i > 0 && inside(&run.snapshots[i - 1]) {
        i -= 1;
    }
    Some(run.snapshots[i].stamp)
}

/// `sup_a min_{b ∈ set} d(a, b)` at each snapshot.
pub fn distance_series(run: &BundleRun, set: &[GridFunction], norm: NormKind) -> Result<Vec<(f64, f64)>> {
    run.snapshots
        .iter()
        .map(|s| {
            let states: Vec<GridFunction> = s.states.iter().map(|m| m.endpoint.clone()).collect();
            Ok((s.stamp, hausdorff_semidist_states(&states, set, norm)?))
        })
        .collect()
}

/// Largest increase of a series at or after `from`.
pub fn max_increase_after(series: &[(f64, f64)], from: f64) -> f64 {
    series
        .windows(2)
        .filter(|w| w[0].0 >= from)
        .map(|w| w[1].1 - w[0].1)
        .fold(0.0, f64::max)
}

fn excess(u: &GridFunction, theta: &GridFunction) -> f64 {
    u.values()
        .iter()
        .zip(theta.values())
        .map(|(v, t)| v.abs() - t)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `max(|u| - θ)` over members, snapshots from `start` on, segment samples
/// and nodes (not clipped).
pub fn envelope_excess(run: &BundleRun, theta: &GridFunction, start: usize) -> f64 {
    run.snapshots[start.min(run.snapshots.len())..]
        .iter()
        .flat_map(|s| s.states.iter())
        .flat_map(|m| m.segment.iter().chain(std::iter::once(&m.endpoint)))
        .map(|u| excess(u, theta))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContainmentReport {
    pub window_fraction: f64,
    pub window_start: f64,
    /// `max(|u| - θ)` over the trailing window; negative when strictly inside.
    pub max_violation: f64,
    /// Same quantity over the ω-limit representatives.
    pub omega_violation: f64,
    pub omega_clusters: usize,
    pub contained: bool,
    pub tolerance: f64,
}

pub fn containment_check(
    run: &BundleRun,
    theta: &GridFunction,
    window_fraction: f64,
    tolerance: f64,
) -> Result<ContainmentReport> {
    let start = run.window_start(window_fraction)?;
    let max_violation = envelope_excess(run, theta, start);
    let omega = omega_limit_estimate(run, window_fraction, None)?;
    let omega_violation = omega
        .iter()
        .map(|u| excess(u, theta))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ContainmentReport {
        window_fraction,
        window_start: run.snapshots[start].stamp,
        max_violation,
        omega_violation,
        omega_clusters: omega.len(),
        contained: max_violation <= tolerance && omega_violation <= tolerance,
        tolerance,
    })
}

/// Members `φ_j(σ, x) = scale · θ(x) · cos(ν_j σ + ψ_j)` with random `ν_j`,
/// `ψ_j`; all lie inside the `±scale·θ` envelope.
pub fn members_inside(
    theta: &GridFunction,
    rho: f64,
    dsigma: f64,
    count: usize,
    scale: f64,
    seed: u64,
) -> Result<Vec<InitialFunction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let freq = rng.gen_range(0.0..2.0 * std::f64::consts::PI / rho);
            let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let amp = scale * rng.gen_range(-1.0..1.0);
            let n = (rho / dsigma).ceil() as usize;
            let sigma: Vec<f64> = (0..=n).map(|j| -rho + rho * j as f64 / n as f64).collect();
            let states = sigma
                .iter()
                .map(|&s| theta.scale(amp * (freq * s + phase).cos()))
                .collect();
            InitialFunction::new(sigma, states)
        })
        .collect()
}
