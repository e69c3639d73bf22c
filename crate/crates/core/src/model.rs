//! Problem instances: reaction `f`, nonlocal diffusion `a(l(u))`, history
//! `φ` on `[-ρ, 0]`, forcing `h`, and the structural constants of the
//! sign condition on `u f(u)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};

/// Scalar reaction term `f`. The reaction strength `λ` is applied by callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    Zero,
    /// `u - u³`
    ChafeeInfante,
    /// `slope * u`
    Linear { slope: f64 },
    /// `Σ coeffs[k] u^k`
    Polynomial { coeffs: Vec<f64> },
}

impl Nonlinearity {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::ChafeeInfante => u - u * u * u,
            Nonlinearity::Linear { slope } => slope * u,
            Nonlinearity::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c),
        }
    }
}

/// Diffusion law `a(s)`; evaluation is clamped to `[m, M]` by [`ProblemSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffusionLaw {
    Constant { value: f64 },
    /// `lo + (hi - lo) / (1 + |s|)`, decreasing from `hi` at `s = 0` to `lo`.
    Rational { lo: f64, hi: f64 },
    /// `intercept + slope * s`
    Affine { intercept: f64, slope: f64 },
}

impl DiffusionLaw {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            DiffusionLaw::Constant { value } => value,
            DiffusionLaw::Rational { lo, hi } => lo + (hi - lo) / (1.0 + s.abs()),
            DiffusionLaw::Affine { intercept, slope } => intercept + slope * s,
        }
    }
}

/// The functional `l` feeding the diffusion law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Functional {
    /// `‖u‖²_{L²}`
    L2NormSq,
    /// `‖u‖_{H¹₀}`
    H10Norm,
    /// `∫ u dx`
    MeanIntegral,
}

impl Functional {
    pub fn eval(&self, u: &GridFunction) -> f64 {
        match self {
            Functional::L2NormSq => {
                let l2 = u.l2();
                l2 * l2
            }
            Functional::H10Norm => u.h10(),
            Functional::MeanIntegral => u.mean_integral(),
        }
    }

    fn nonnegative(&self) -> bool {
        !matches!(self, Functional::MeanIntegral)
    }
}

/// Bounded forcing `h(τ, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Forcing {
    #[default]
    None,
    Constant { value: f64 },
    /// `amplitude * cos(frequency τ) * sin(k π x)`
    SineMode { amplitude: f64, k: u32, frequency: f64 },
}

impl Forcing {
    pub fn is_zero(&self) -> bool {
        match *self {
            Forcing::None => true,
            Forcing::Constant { value } => value == 0.0,
            Forcing::SineMode { amplitude, .. } => amplitude == 0.0,
        }
    }

    pub fn eval(&self, tau: f64, x: f64) -> f64 {
        match *self {
            Forcing::None => 0.0,
            Forcing::Constant { value } => value,
            Forcing::SineMode { amplitude, k, frequency } => {
                amplitude * (frequency * tau).cos() * (k as f64 * PI * x).sin()
            }
        }
    }

    /// `sup |h|` over all arguments.
    pub fn sup_bound(&self) -> f64 {
        match *self {
            Forcing::None => 0.0,
            Forcing::Constant { value } => value.abs(),
            Forcing::SineMode { amplitude, .. } => amplitude.abs(),
        }
    }

    /// Adds `scale * h(τ, ·)` to `out`.
    pub fn add_to(&self, tau: f64, scale: f64, out: &mut GridFunction) {
        if self.is_zero() {
            return;
        }
        let grid = out.grid();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            *v += scale * self.eval(tau, grid.x(i));
        }
    }
}

/// One separable term `amplitude * cos(frequency σ + phase) * sin(k π x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeTerm {
    pub k: u32,
    pub amplitude: f64,
    #[serde(default)]
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl ModeTerm {
    pub fn eval(&self, sigma: f64, x: f64) -> f64 {
        self.amplitude * (self.frequency * sigma + self.phase).cos() * (self.k as f64 * PI * x).sin()
    }
}

/// Description of the initial history `φ` on `[-ρ, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialProfile {
    Zero,
    ModeSum {
        terms: Vec<ModeTerm>,
    },
    /// Random mode sum, rescaled so that `sup_σ ‖φ(σ)‖_∞ ≈ linf`.
    RandomModes {
        seed: u64,
        n_modes: u32,
        linf: f64,
    },
    /// Explicit samples; `values[j]` holds the interior nodes at `sigma[j]`.
    Samples {
        sigma: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl InitialProfile {
    pub fn sine(amplitude: f64) -> Self {
        InitialProfile::ModeSum {
            terms: vec![ModeTerm {
                k: 1,
                amplitude,
                frequency: 0.0,
                phase: 0.0,
            }],
        }
    }

    /// Resolve a random profile into explicit mode terms.
    pub fn random_terms(seed: u64, n_modes: u32, linf: f64, rho: f64) -> Vec<ModeTerm> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms: Vec<ModeTerm> = (1..=n_modes.max(1))
            .map(|k| ModeTerm {
                k,
                amplitude: rng.gen_range(-1.0..1.0) / k as f64,
                frequency: rng.gen_range(0.0..2.0 * PI / rho),
                phase: rng.gen_range(0.0..2.0 * PI),
            })
            .collect();
        // reference sampling used for rescaling
        let mut sup = 0.0_f64;
        for j in 0..=200 {
            let sigma = -rho * j as f64 / 200.0;
            for i in 1..512 {
                let x = i as f64 / 512.0;
                let v: f64 = terms.iter().map(|t| t.eval(sigma, x)).sum();
                sup = sup.max(v.abs());
            }
        }
        if sup > 0.0 {
            for t in &mut terms {
                t.amplitude *= linf / sup;
            }
        }
        terms
    }
}

/// `φ` sampled on a σ-grid covering `[-ρ, 0]`, interpolated linearly in time.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialFunction {
    sigma: Vec<f64>,
    states: Vec<GridFunction>,
}

impl InitialFunction {
    pub fn new(sigma: Vec<f64>, states: Vec<GridFunction>) -> Result<Self> {
        if sigma.len() != states.len() || sigma.is_empty() {
            return Err(Error::Parameter(format!(
                "initial function needs matching, nonempty stamp/state lists ({} vs {})",
                sigma.len(),
                states.len()
            )));
        }
        if sigma.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("initial function stamps must increase strictly".into()));
        }
        if *sigma.last().unwrap() != 0.0 {
            return Err(Error::Parameter("initial function must end at σ = 0".into()));
        }
        let grid = states[0].grid();
        if states.iter().any(|s| s.grid() != grid) {
            return Err(Error::Parameter("initial function states must share one grid".into()));
        }
        Ok(InitialFunction { sigma, states })
    }

    /// Sample `phi(σ, x)` on the uniform σ-grid of `[-rho, 0]` with spacing
    /// at most `dsigma`.
    pub fn from_fn(
        grid: Grid,
        rho: f64,
        dsigma: f64,
        phi: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        if !(dsigma > 0.0) || !(rho > 0.0) {
            return Err(Error::Parameter(format!(
                "need rho > 0 and dsigma > 0, got rho = {rho}, dsigma = {dsigma}"
            )));
        }
        let steps = ((rho / dsigma) - 1e-9).ceil().max(1.0) as usize;
        let sigma: Vec<f64> = (0..=steps)
            .map(|j| if j == steps { 0.0 } else { -rho + rho * j as f64 / steps as f64 })
            .collect();
        let states = sigma
            .iter()
            .map(|&s| GridFunction::new(grid, grid.nodes().map(|x| phi(s, x)).collect()))
            .collect::<Result<Vec<_>>>()?;
        InitialFunction::new(sigma, states)
    }

    /// History constant in time.
    pub fn stationary(state: GridFunction, rho: f64) -> Result<Self> {
        InitialFunction::new(vec![-rho, 0.0], vec![state.clone(), state])
    }

    pub fn from_profile(profile: &InitialProfile, grid: Grid, rho: f64, dsigma: f64) -> Result<Self> {
        match profile {
            InitialProfile::Zero => InitialFunction::from_fn(grid, rho, rho, |_, _| 0.0),
            InitialProfile::ModeSum { terms } => InitialFunction::from_fn(grid, rho, dsigma, |s, x| {
                terms.iter().map(|t| t.eval(s, x)).sum()
            }),
            InitialProfile::RandomModes { seed, n_modes, linf } => {
                let terms = InitialProfile::random_terms(*seed, *n_modes, *linf, rho);
                InitialFunction::from_fn(grid, rho, dsigma, |s, x| {
                    terms.iter().map(|t| t.eval(s, x)).sum()
                })
            }
            InitialProfile::Samples { sigma, values } => {
                let states = values
                    .iter()
                    .map(|v| GridFunction::new(grid, v.clone()))
                    .collect::<Result<Vec<_>>>()?;
                let f = InitialFunction::new(sigma.clone(), states)?;
                if (f.sigma[0] + rho).abs() > 1e-12 * rho.max(1.0) {
                    return Err(Error::Parameter(format!(
                        "initial samples start at {} but must cover [-{rho}, 0]",
                        f.sigma[0]
                    )));
                }
                Ok(f)
            }
        }
    }

    pub fn grid(&self) -> Grid {
        self.states[0].grid()
    }

    pub fn stamps(&self) -> &[f64] {
        &self.sigma
    }

    pub fn states(&self) -> &[GridFunction] {
        &self.states
    }

    pub fn start(&self) -> f64 {
        self.sigma[0]
    }

    pub fn at_zero(&self) -> &GridFunction {
        self.states.last().unwrap()
    }

    /// `φ(σ)` by linear interpolation; exact at samples.
    pub fn eval(&self, sigma: f64) -> Result<GridFunction> {
        let lo = self.sigma[0];
        let tol = 1e-12 * (1.0 + lo.abs());
        if !(sigma >= lo - tol && sigma <= tol) {
            return Err(Error::Range {
                what: "initial function time",
                value: sigma,
                lo,
                hi: 0.0,
            });
        }
        let s = sigma.clamp(lo, 0.0);
        let idx = self.sigma.partition_point(|&t| t <= s);
        if idx == 0 {
            return Ok(self.states[0].clone());
        }
        let j = idx - 1;
        if self.sigma[j] == s || j + 1 == self.sigma.len() {
            return Ok(self.states[j].clone());
        }
        let w = (s - self.sigma[j]) / (self.sigma[j + 1] - self.sigma[j]);
        Ok(GridFunction::lerp(&self.states[j], &self.states[j + 1], w))
    }

    /// `sup_σ ‖φ(σ)‖_∞` over the samples.
    pub fn sup_linf(&self) -> f64 {
        self.states.iter().map(GridFunction::linf).fold(0.0, f64::max)
    }
}

/// A full problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub lambda: f64,
    pub gamma: f64,
    pub rho: f64,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub f: Nonlinearity,
    pub a: DiffusionLaw,
    pub l: Functional,
    pub phi: InitialProfile,
    #[serde(default)]
    pub h: Forcing,
    pub grid: Grid,
}

impl ProblemSpec {
    /// Chafee–Infante reaction with `a(s) = 1 + 1/(1+s)` on `l = ‖u‖²`,
    /// `λ = γ = ρ = 1`, `m = 1`, `M = 2`.
    pub fn canonical(grid: Grid, phi: InitialProfile) -> Self {
        ProblemSpec {
            lambda: 1.0,
            gamma: 1.0,
            rho: 1.0,
            m: 1.0,
            big_m: 2.0,
            f: Nonlinearity::ChafeeInfante,
            a: DiffusionLaw::Rational { lo: 1.0, hi: 2.0 },
            l: Functional::L2NormSq,
            phi,
            h: Forcing::None,
            grid,
        }
    }

    /// Linear heat flow (`a ≡ 1`, `f ≡ 0`, `γ = 0`).
    pub fn heat(grid: Grid, phi: InitialProfile) -> Self {
        ProblemSpec {
            lambda: 1.0,
            gamma: 0.0,
            rho: 1.0,
            m: 1.0,
            big_m: 1.0,
            f: Nonlinearity::Zero,
            a: DiffusionLaw::Constant { value: 1.0 },
            l: Functional::L2NormSq,
            phi,
            h: Forcing::None,
            grid,
        }
    }

    pub fn initial_function(&self, dsigma: f64) -> Result<InitialFunction> {
        InitialFunction::from_profile(&self.phi, self.grid, self.rho, dsigma)
    }

    pub fn nu_values(&self) -> [f64; 2] {
        [self.m / self.lambda, self.big_m / self.lambda]
    }

    /// Unclamped `a(l(u))`.
    pub fn raw_diffusion(&self, u: &GridFunction) -> f64 {
        self.a.eval(self.l.eval(u))
    }
}

/// Pointwise `f(u_i)`.
pub fn eval_f(spec: &ProblemSpec, u: &GridFunction) -> Result<GridFunction> {
    let out = u.map(|v| spec.f.eval(v));
    match out.first_non_finite() {
        Some((node, value)) => Err(Error::NonFinite { node, value }),
        None => Ok(out),
    }
}

/// `clamp(a(l(u)), m, M)`.
pub fn eval_diffusion(spec: &ProblemSpec, u: &GridFunction) -> f64 {
    let raw = spec.raw_diffusion(u);
    if raw.is_nan() {
        return spec.big_m;
    }
    raw.clamp(spec.m, spec.big_m)
}

/// Human-readable diagnostics; empty iff the instance is well formed and `a`
/// needs no clamping over the sampled range of `l`.
pub fn validate_spec(spec: &ProblemSpec) -> Vec<String> {
    let mut diags = Vec::new();
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if !positive(spec.lambda) {
        diags.push(format!("lambda must be positive (got {})", spec.lambda));
    }
    if !(spec.gamma >= 0.0 && spec.gamma.is_finite()) {
        diags.push(format!("gamma must be nonnegative (got {})", spec.gamma));
    }
    if !positive(spec.rho) {
        diags.push(format!("rho must be positive (got {})", spec.rho));
    }
    if !positive(spec.m) {
        diags.push(format!("m must be positive (got {})", spec.m));
    }
    if !(spec.big_m.is_finite() && spec.big_m >= spec.m) {
        diags.push(format!("M must be finite and at least m (got m = {}, M = {})", spec.m, spec.big_m));
    }
    if !diags.is_empty() {
        return diags;
    }

    let mut l_samples: Vec<f64> = std::iter::once(0.0)
        .chain((0..=240).map(|k| 10f64.powf(-6.0 + 12.0 * k as f64 / 240.0)))
        .collect();
    if !spec.l.nonnegative() {
        let neg: Vec<f64> = l_samples.iter().map(|s| -s).collect();
        l_samples.extend(neg);
    }
    match InitialFunction::from_profile(&spec.phi, spec.grid, spec.rho, spec.rho / 100.0) {
        Ok(phi) => l_samples.extend(phi.states().iter().map(|s| spec.l.eval(s))),
        Err(e) => diags.push(format!("initial function: {e}")),
    }
    let mut worst: Option<(f64, f64)> = None;
    for &s in &l_samples {
        let a = spec.a.eval(s);
        let excess = if a.is_nan() {
            f64::INFINITY
        } else {
            (spec.m - a).max(a - spec.big_m)
        };
        if excess > 1e-12 * spec.big_m && worst.map_or(true, |(e, _)| excess > e) {
            worst = Some((excess, s));
        }
    }
    if let Some((_, s)) = worst {
        diags.push(format!(
            "a(s) = {} at s = {s} leaves [{}, {}]; clamping activates",
            spec.a.eval(s),
            spec.m,
            spec.big_m
        ));
    }
    if let Forcing::SineMode { amplitude, frequency, .. } = spec.h {
        if !(amplitude.is_finite() && frequency.is_finite()) {
            diags.push("forcing parameters must be finite".into());
        }
    }
    diags
}

/// Minimal `C₁` with `u(u - u³) ≤ -ν C₀ u² + C₁ |u|` for all real `u`.
pub fn derive_chafee_constants(c0: f64, nu: f64) -> f64 {
    let p = 1.0 + nu * c0;
    if p <= 0.0 {
        return 0.0;
    }
    2.0 / (3.0 * 3f64.sqrt()) * p.powf(1.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralConstants {
    pub c0: f64,
    pub c1: f64,
    pub nu_values: [f64; 2],
}

impl StructuralConstants {
    /// Constants for the reaction families with a closed form; `None` when
    /// the family admits no finite `C₁` for this `C₀` (or has no formula).
    pub fn derive(spec: &ProblemSpec, c0: f64) -> Option<Self> {
        let nu_values = spec.nu_values();
        let c1 = match &spec.f {
            Nonlinearity::ChafeeInfante => nu_values
                .iter()
                .map(|&nu| derive_chafee_constants(c0, nu))
                .fold(0.0, f64::max),
            Nonlinearity::Zero => {
                if nu_values.iter().all(|nu| nu * c0 <= 0.0) {
                    0.0
                } else {
                    return None;
                }
            }
            Nonlinearity::Linear { slope } => {
                if nu_values.iter().all(|nu| slope + nu * c0 <= 0.0) {
                    0.0
                } else {
                    return None;
                }
            }
            Nonlinearity::Polynomial { .. } => return None,
        };
        Some(StructuralConstants { c0, c1, nu_values })
    }
}
