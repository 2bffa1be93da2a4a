//! Euler–Maruyama simulation of the stochastic delay system
//! `dy = Λy dt + F y_t dt + L(y(t−), y_{t−}) dZ(t)` on the mode truncation.
//!
//! Randomness: path `p` under master seed `s` uses `ChaCha8Rng` keyed by
//! `seed_from_u64(s)` on stream `p`, so results do not depend on how paths
//! are scheduled. Ensembles are processed in chunks of [`CHUNK`] paths and
//! reduced in chunk order.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::delay::{voc_reconstruct, DelayKernel, GreenOperator, HistorySegment, KernelTarget};
use crate::operator::{BlockOperator, SpectralOperator};
use crate::{Error, Result};

/// Paths per work unit in ensemble runs.
pub const CHUNK: u64 = 64;

/// Generator for path `path` under master seed `master`.
pub fn path_rng(master: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(path);
    rng
}

/// Law of the jump size `‖z‖`.
#[derive(Debug, Clone, PartialEq)]
pub enum NormLaw {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    Exponential { rate: f64 },
    /// Density `α x_m^α / x^{α+1}` on `[x_m, ∞)`.
    Pareto { scale: f64, tail_index: f64 },
}

impl NormLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            NormLaw::Constant(c) => c.is_finite() && c >= 0.0,
            NormLaw::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi,
            NormLaw::Exponential { rate } => rate.is_finite() && rate > 0.0,
            NormLaw::Pareto { scale, tail_index } => {
                scale.is_finite() && scale > 0.0 && tail_index.is_finite() && tail_index > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("noise.jump.law", format!("{self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NormLaw::Constant(c) => c,
            NormLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            NormLaw::Exponential { rate } => -(1.0 - rng.random::<f64>()).ln() / rate,
            NormLaw::Pareto { scale, tail_index } => scale * (1.0 - rng.random::<f64>()).powf(-1.0 / tail_index),
        }
    }

    /// `E[R^k; a < R ≤ b]` for `k ∈ {0, 1, 2}`; `b` may be infinite, in
    /// which case the result may be `+∞`.
    pub fn partial_moment(&self, k: u32, a: f64, b: f64) -> f64 {
        let a = a.max(0.0);
        if b <= a {
            return 0.0;
        }
        let kf = k as f64;
        match *self {
            NormLaw::Constant(c) => {
                if c > a && c <= b {
                    c.powi(k as i32)
                } else {
                    0.0
                }
            }
            NormLaw::Uniform { lo, hi } => {
                if hi <= lo {
                    return NormLaw::Constant(lo).partial_moment(k, a, b);
                }
                let x0 = a.max(lo);
                let x1 = b.min(hi);
                if x1 <= x0 {
                    return 0.0;
                }
                (x1.powf(kf + 1.0) - x0.powf(kf + 1.0)) / ((kf + 1.0) * (hi - lo))
            }
            NormLaw::Exponential { rate } => {
                // Antiderivatives of x^k·μe^{−μx}.
                let prim = |x: f64| -> f64 {
                    if x.is_infinite() {
                        return 0.0;
                    }
                    let e = (-rate * x).exp();
                    match k {
                        0 => -e,
                        1 => -(x + 1.0 / rate) * e,
                        _ => -(x * x + 2.0 * x / rate + 2.0 / (rate * rate)) * e,
                    }
                };
                prim(b) - prim(a)
            }
            NormLaw::Pareto { scale, tail_index } => {
                let x0 = a.max(scale);
                if b <= x0 {
                    return 0.0;
                }
                let c = tail_index * scale.powf(tail_index);
                let p = kf - tail_index;
                if b.is_infinite() {
                    if p >= 0.0 {
                        return f64::INFINITY;
                    }
                    return c * (-x0.powf(p)) / p;
                }
                if p.abs() < 1e-14 {
                    c * (b / x0).ln()
                } else {
                    c * (b.powf(p) - x0.powf(p)) / p
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JumpDirection {
    /// Uniform on the unit sphere of the noise space.
    Isotropic,
    /// Fixed unit vector (normalised on construction).
    Fixed(DVector<f64>),
}

/// Compound-Poisson jump part: `z = ‖z‖·d`, `‖z‖ ~ law`, arrivals at `rate`.
/// Jumps with `‖z‖ < truncation` are discarded, so the Lévy measure is
/// `ν = rate · law(z; ‖z‖ ≥ truncation)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSpec {
    pub rate: f64,
    pub law: NormLaw,
    pub direction: JumpDirection,
    pub truncation: f64,
    /// Small jumps (`‖z‖ ≤ 1`) enter as a compensated integral.
    pub compensated: bool,
}

impl JumpSpec {
    pub fn new(rate: f64, law: NormLaw) -> Self {
        JumpSpec {
            rate,
            law,
            direction: JumpDirection::Isotropic,
            truncation: 0.0,
            compensated: false,
        }
    }

    pub fn with_direction(mut self, direction: JumpDirection) -> Self {
        self.direction = direction;
        self
    }

    pub fn compensated(mut self, on: bool) -> Self {
        self.compensated = on;
        self
    }

    pub fn with_truncation(mut self, eps: f64) -> Self {
        self.truncation = eps;
        self
    }

    fn lower(&self) -> f64 {
        // R ≥ ε is kept; the half-open convention of partial_moment only
        // matters for atoms exactly at ε.
        if self.truncation > 0.0 {
            self.truncation * (1.0 - 1e-15)
        } else {
            -1.0
        }
    }

    /// `∫ ‖z‖² ν(dz)`.
    pub fn second_moment(&self) -> f64 {
        self.rate * self.law.partial_moment(2, self.lower(), f64::INFINITY)
    }

    /// `∫_{‖z‖>1} ‖z‖ ν(dz)`.
    pub fn first_tail_moment(&self) -> f64 {
        self.rate * self.law.partial_moment(1, 1.0_f64.max(self.lower()), f64::INFINITY)
    }

    /// `∫_{‖z‖≤1} z ν(dz)` in a space of dimension `dim`.
    pub fn small_jump_mean(&self, dim: usize) -> DVector<f64> {
        match &self.direction {
            JumpDirection::Isotropic => DVector::zeros(dim),
            JumpDirection::Fixed(d) => d * (self.rate * self.law.partial_moment(1, self.lower(), 1.0)),
        }
    }

    fn draw_direction<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut DVector<f64>) {
        match &self.direction {
            JumpDirection::Fixed(d) => out.copy_from(d),
            JumpDirection::Isotropic => loop {
                for x in out.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                let n = out.norm();
                if n > 1e-300 {
                    *out /= n;
                    break;
                }
            },
        }
    }
}

/// Noise on `K = ℝ^m`: a `Q`-Wiener part with `Q = diag(q_j)` and an optional
/// compound-Poisson jump part.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    wiener_variances: Vec<f64>,
    jump: Option<JumpSpec>,
}

impl NoiseSpec {
    pub fn wiener(variances: Vec<f64>) -> Result<Self> {
        if variances.is_empty() {
            return Err(Error::invalid("noise.wiener_variances", "noise dimension must be positive"));
        }
        if let Some(q) = variances.iter().find(|q| !q.is_finite() || **q < 0.0) {
            return Err(Error::invalid("noise.wiener_variances", format!("variance {q} must be finite and ≥ 0")));
        }
        Ok(NoiseSpec {
            wiener_variances: variances,
            jump: None,
        })
    }

    /// `q_j = q₀/j²`, `j = 1..=dim`.
    pub fn decaying_profile(q0: f64, dim: usize) -> Result<Self> {
        NoiseSpec::wiener((1..=dim).map(|j| q0 / (j * j) as f64).collect())
    }

    /// Pure-jump noise (no Gaussian part) of dimension `dim`.
    pub fn pure_jump(dim: usize, jump: JumpSpec) -> Result<Self> {
        NoiseSpec::wiener(vec![0.0; dim])?.with_jumps(jump)
    }

    pub fn with_jumps(mut self, mut jump: JumpSpec) -> Result<Self> {
        if !jump.rate.is_finite() {
            return Err(Error::invalid(
                "noise.jump.rate",
                "infinite-activity jump measures are not supported; use a finite compound-Poisson rate",
            ));
        }
        if jump.rate <= 0.0 {
            return Err(Error::invalid("noise.jump.rate", "must be > 0"));
        }
        if !jump.truncation.is_finite() || jump.truncation < 0.0 {
            return Err(Error::invalid("noise.jump.truncation", "must be finite and ≥ 0"));
        }
        jump.law.validate()?;
        if let JumpDirection::Fixed(d) = &mut jump.direction {
            if d.len() != self.noise_dim() {
                return Err(Error::DimensionMismatch {
                    context: "jump direction vs noise dimension",
                    expected: self.noise_dim(),
                    found: d.len(),
                });
            }
            let n = d.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::ZeroVector(n));
            }
            *d /= n;
        }
        self.jump = Some(jump);
        Ok(self)
    }

    pub fn noise_dim(&self) -> usize {
        self.wiener_variances.len()
    }

    pub fn wiener_variances(&self) -> &[f64] {
        &self.wiener_variances
    }

    pub fn jump(&self) -> Option<&JumpSpec> {
        self.jump.as_ref()
    }

    pub fn trace_q(&self) -> f64 {
        self.wiener_variances.iter().sum()
    }

    pub fn has_gaussian_part(&self) -> bool {
        self.trace_q() > 0.0
    }

    /// `∫‖z‖²ν(dz)`, zero without jumps.
    pub fn jump_second_moment(&self) -> f64 {
        self.jump.as_ref().map_or(0.0, JumpSpec::second_moment)
    }

    /// `∫_{‖z‖>1}‖z‖ν(dz)`, zero without jumps.
    pub fn jump_first_tail_moment(&self) -> f64 {
        self.jump.as_ref().map_or(0.0, JumpSpec::first_tail_moment)
    }

    pub fn second_moment_finite(&self) -> bool {
        self.jump_second_moment().is_finite()
    }

    pub fn first_tail_finite(&self) -> bool {
        self.jump_first_tail_moment().is_finite()
    }

    /// Compensator drift over a step of length `h`.
    fn compensation(&self, h: f64) -> DVector<f64> {
        match &self.jump {
            Some(j) if j.compensated => j.small_jump_mean(self.noise_dim()) * (-h),
            _ => DVector::zeros(self.noise_dim()),
        }
    }
}

/// Noise over one step `(t, t + h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyIncrement {
    /// `ΔW` with covariance `hQ`.
    pub gaussian: DVector<f64>,
    /// Compensator `−h∫_{‖z‖≤1} zν(dz)` (zero unless compensated).
    pub drift: DVector<f64>,
    /// Jumps as `(offset in (0, h], z)`, sorted by offset.
    pub jumps: Vec<(f64, DVector<f64>)>,
}

pub fn levy_increment<R: Rng + ?Sized>(noise: &NoiseSpec, h: f64, rng: &mut R) -> LevyIncrement {
    let m = noise.noise_dim();
    let mut gaussian = DVector::zeros(m);
    fill_gaussian(noise, h, rng, &mut gaussian);
    let mut jumps = Vec::new();
    if let Some(j) = &noise.jump {
        let n = poisson_count(j.rate * h, rng);
        for _ in 0..n {
            let at = h * (1.0 - rng.random::<f64>());
            let r = j.law.sample(rng);
            let mut d = DVector::zeros(m);
            j.draw_direction(rng, &mut d);
            if r >= j.truncation {
                jumps.push((at, d * r));
            }
        }
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    LevyIncrement {
        gaussian,
        drift: noise.compensation(h),
        jumps,
    }
}

fn fill_gaussian<R: Rng + ?Sized>(noise: &NoiseSpec, h: f64, rng: &mut R, out: &mut DVector<f64>) {
    for (x, q) in out.iter_mut().zip(&noise.wiener_variances) {
        *x = if *q > 0.0 {
            (q * h).sqrt() * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
    }
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("finite positive Poisson mean");
    let n: f64 = d.sample(rng);
    n as usize
}

/// `R(y, delayed) → L`, writing the `dim × noise_dim` coefficient into the
/// last argument. `delayed[i]` is the state at the `i`-th atom of `κ`.
pub type DiffusionFn = dyn Fn(&DVector<f64>, &[DVector<f64>], &mut DMatrix<f64>) + Send + Sync;

/// Lipschitz diffusion with declared constants:
/// `‖R(φ) − R(ψ)‖² ≤ α₁‖φ(0) − ψ(0)‖² + α₂∫‖φ(θ) − ψ(θ)‖²κ(dθ)`.
#[derive(Clone)]
pub struct NonlinearDiffusion {
    pub alpha1: f64,
    pub alpha2: f64,
    /// Atoms `(θ, mass)` of `κ` on `[−r, 0]`.
    pub kappa: Vec<(f64, f64)>,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub label: String,
    pub map: Arc<DiffusionFn>,
}

impl fmt::Debug for NonlinearDiffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearDiffusion")
            .field("label", &self.label)
            .field("alpha1", &self.alpha1)
            .field("alpha2", &self.alpha2)
            .field("kappa", &self.kappa)
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .finish()
    }
}

impl NonlinearDiffusion {
    pub fn kappa_mass(&self) -> f64 {
        self.kappa.iter().map(|(_, m)| m).sum()
    }
}

#[derive(Debug, Clone)]
pub enum DiffusionSpec {
    /// Constant `L` (`dim × noise_dim`).
    Additive(DMatrix<f64>),
    Nonlinear(NonlinearDiffusion),
}

impl DiffusionSpec {
    pub fn zero(state_dim: usize, noise_dim: usize) -> Self {
        DiffusionSpec::Additive(DMatrix::zeros(state_dim, noise_dim))
    }

    pub fn nonlinear(
        alpha1: f64,
        alpha2: f64,
        kappa: Vec<(f64, f64)>,
        state_dim: usize,
        noise_dim: usize,
        label: impl Into<String>,
        map: Arc<DiffusionFn>,
    ) -> Result<Self> {
        if !(alpha1 >= 0.0 && alpha2 >= 0.0 && alpha1.is_finite() && alpha2.is_finite()) {
            return Err(Error::invalid("diffusion.alpha", "α₁, α₂ must be finite and ≥ 0"));
        }
        for &(theta, mass) in &kappa {
            if !(theta <= 0.0 && theta.is_finite() && mass >= 0.0 && mass.is_finite()) {
                return Err(Error::invalid("diffusion.kappa", format!("atom ({theta}, {mass})")));
            }
        }
        Ok(DiffusionSpec::Nonlinear(NonlinearDiffusion {
            alpha1,
            alpha2,
            kappa,
            state_dim,
            noise_dim,
            label: label.into(),
            map,
        }))
    }

    /// `βu(t−1, ξ)/(1 + |u(t, ξ)|)` driven by a scalar Brownian motion, for
    /// the Dirichlet sine basis on `(0, 1)`. Point values are taken on the
    /// `J = 2N` interior nodes `ξ_j = j/(J+1)`, where the discrete sine
    /// transform is exact on the first `J` modes. Declared constants are
    /// `α₁ = α₂ = β²`, `κ = δ_{−1}`.
    pub fn wave_example(a: &SpectralOperator, beta: f64) -> Result<Self> {
        if a.basis_label() != "dirichlet-sine-(0,1)" {
            return Err(Error::invalid(
                "diffusion",
                format!("the wave diffusion needs the Dirichlet sine basis, got {}", a.basis_label()),
            ));
        }
        if !beta.is_finite() {
            return Err(Error::invalid("diffusion.beta", "must be finite"));
        }
        let n = a.n_modes();
        let basis = sine_nodes(n);
        let j = basis.nrows();
        let inv_sqrt: Vec<f64> = a.sqrt_eigenvalues().iter().map(|s| 1.0 / s).collect();
        let map = move |y: &DVector<f64>, delayed: &[DVector<f64>], out: &mut DMatrix<f64>| {
            let mut now = vec![0.0; n];
            let mut past = vec![0.0; n];
            for m in 0..n {
                now[m] = y[m] * inv_sqrt[m];
                past[m] = delayed[0][m] * inv_sqrt[m];
            }
            let mut g = vec![0.0; j];
            for (row, gj) in g.iter_mut().enumerate() {
                let (mut u, mut v) = (0.0, 0.0);
                for m in 0..n {
                    let e = basis[(row, m)];
                    u += e * now[m];
                    v += e * past[m];
                }
                *gj = beta * v / (1.0 + u.abs());
            }
            out.fill(0.0);
            let scale = 1.0 / (j + 1) as f64;
            for m in 0..n {
                let mut s = 0.0;
                for (row, gj) in g.iter().enumerate() {
                    s += basis[(row, m)] * gj;
                }
                out[(n + m, 0)] = s * scale;
            }
        };
        DiffusionSpec::nonlinear(
            beta * beta,
            beta * beta,
            vec![(-1.0, 1.0)],
            2 * n,
            1,
            format!("wave beta={beta}"),
            Arc::new(map),
        )
    }

    pub fn state_dim(&self) -> usize {
        match self {
            DiffusionSpec::Additive(l) => l.nrows(),
            DiffusionSpec::Nonlinear(d) => d.state_dim,
        }
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            DiffusionSpec::Additive(l) => l.ncols(),
            DiffusionSpec::Nonlinear(d) => d.noise_dim,
        }
    }

    pub fn is_additive(&self) -> bool {
        matches!(self, DiffusionSpec::Additive(_))
    }

    /// `(α₁, α₂, κ([−r, 0]))`; zero for additive noise.
    pub fn lipschitz_constants(&self) -> (f64, f64, f64) {
        match self {
            DiffusionSpec::Additive(_) => (0.0, 0.0, 0.0),
            DiffusionSpec::Nonlinear(d) => (d.alpha1, d.alpha2, d.kappa_mass()),
        }
    }

    fn kappa(&self) -> &[(f64, f64)] {
        match self {
            DiffusionSpec::Additive(_) => &[],
            DiffusionSpec::Nonlinear(d) => &d.kappa,
        }
    }
}

/// `√2 sin(mπξ_j)` at `ξ_j = j/(2N+1)`, `j = 1..=2N`, `m = 1..=N`.
pub fn sine_nodes(n: usize) -> DMatrix<f64> {
    let j = 2 * n;
    DMatrix::from_fn(j, n, |row, m| {
        let xi = (row + 1) as f64 / (j + 1) as f64;
        std::f64::consts::SQRT_2 * ((m + 1) as f64 * std::f64::consts::PI * xi).sin()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    pub max_ratio: f64,
    pub declared_ok: bool,
    pub probes: usize,
    pub skipped: usize,
}

/// Random probes of the declared Lipschitz constants. States and delayed
/// states are drawn with norms up to `scale`; half of the pairs are close
/// (`ψ = φ + small`), half independent. Pairs with a vanishing denominator
/// are skipped.
pub fn lipschitz_check(diffusion: &DiffusionSpec, n_probes: usize, scale: f64, seed: u64) -> Result<LipschitzReport> {
    let d = match diffusion {
        DiffusionSpec::Additive(_) => {
            return Ok(LipschitzReport {
                max_ratio: 0.0,
                declared_ok: true,
                probes: n_probes,
                skipped: 0,
            })
        }
        DiffusionSpec::Nonlinear(d) => d,
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid("scale", "must be finite and > 0"));
    }
    let mut rng = path_rng(seed, 0);
    let dim = d.state_dim;
    let draw = |rng: &mut ChaCha8Rng, s: f64| -> DVector<f64> {
        let mut v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm().max(1e-300);
        v *= s * rng.random::<f64>() / n;
        v
    };
    let mut la = DMatrix::zeros(dim, d.noise_dim);
    let mut lb = DMatrix::zeros(dim, d.noise_dim);
    let (mut max_ratio, mut skipped) = (0.0_f64, 0);
    for p in 0..n_probes {
        let y0 = draw(&mut rng, scale);
        let ya: Vec<_> = d.kappa.iter().map(|_| draw(&mut rng, scale)).collect();
        let (z0, za): (DVector<f64>, Vec<DVector<f64>>) = if p % 2 == 0 {
            let eps = 1e-3 * scale;
            (&y0 + draw(&mut rng, eps), ya.iter().map(|v| v + draw(&mut rng, eps)).collect())
        } else {
            (draw(&mut rng, scale), d.kappa.iter().map(|_| draw(&mut rng, scale)).collect())
        };
        (d.map)(&y0, &ya, &mut la);
        (d.map)(&z0, &za, &mut lb);
        let num = operator_norm(&(&la - &lb)).powi(2);
        let den = d.alpha1 * (&y0 - &z0).norm_squared()
            + d.kappa
                .iter()
                .zip(ya.iter().zip(&za))
                .map(|((_, m), (a, b))| d.alpha2 * m * (a - b).norm_squared())
                .sum::<f64>();
        if den <= 1e-300 {
            if num > 1e-300 {
                max_ratio = f64::INFINITY;
            } else {
                skipped += 1;
            }
            continue;
        }
        max_ratio = max_ratio.max(num / den);
    }
    Ok(LipschitzReport {
        max_ratio,
        declared_ok: max_ratio <= 1.0 + 1e-6,
        probes: n_probes,
        skipped,
    })
}

fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 1 {
        return m.norm();
    }
    m.clone().svd(false, false).singular_values.iter().cloned().fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// `(I − hΛ)y_{k+1} = y_k + hFy_{t_k} + L ΔZ_k`.
    DriftImplicit,
    /// `y_{k+1} = (I + hΛ)y_k + hFy_{t_k} + L ΔZ_k`; needs `|1 + hμ| ≤ 1` on
    /// the spectrum.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub step: f64,
    pub scheme: Scheme,
}

impl SimOptions {
    pub fn new(horizon: f64, step: f64) -> Self {
        SimOptions {
            horizon,
            step,
            scheme: Scheme::DriftImplicit,
        }
    }

    /// Step `r/128`.
    pub fn with_default_step(horizon: f64, delay: f64) -> Self {
        SimOptions::new(horizon, delay / 128.0)
    }

    pub fn scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }
}

/// `(φ₀, φ₁)`: initial state and history on `[−r, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub state: DVector<f64>,
    pub history: HistorySegment,
}

impl InitialData {
    pub fn new(state: DVector<f64>, history: HistorySegment) -> Result<Self> {
        if history.dim() != state.len() {
            return Err(Error::DimensionMismatch {
                context: "history vs state",
                expected: state.len(),
                found: history.dim(),
            });
        }
        Ok(InitialData { state, history })
    }

    /// History constantly equal to the initial state.
    pub fn constant(state: DVector<f64>, horizon: f64) -> Result<Self> {
        let history = HistorySegment::new(horizon, vec![state.clone(), state.clone()])?;
        Ok(InitialData { state, history })
    }
}

enum Linear {
    Blocks(Vec<Matrix2<f64>>),
    Dense(DMatrix<f64>),
}

impl Linear {
    fn apply(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        match self {
            Linear::Blocks(b) => {
                let n = b.len();
                for (m, blk) in b.iter().enumerate() {
                    let v = blk * Vector2::new(x[m], x[n + m]);
                    out[m] = v[0];
                    out[n + m] = v[1];
                }
            }
            Linear::Dense(d) => out.gemv(1.0, d, x, 0.0),
        }
    }
}

/// Position `−θ/h` in the history buffer as two weighted lags.
type Lag = [(usize, f64); 2];

fn lag_of(theta: f64, h: f64, max_lag: usize) -> Lag {
    let x = (-theta / h).max(0.0);
    let near = x.round();
    if (x - near).abs() <= 1e-9 {
        let l = (near as usize).min(max_lag);
        return [(l, 1.0), (l, 0.0)];
    }
    let l0 = (x.floor() as usize).min(max_lag);
    let l1 = (l0 + 1).min(max_lag);
    let w = x - l0 as f64;
    [(l0, 1.0 - w), (l1, w)]
}

/// Lags and weights of `∫_s^e ψ(σ)dσ` for the piecewise-linear interpolant
/// of `ψ` on the step grid.
fn density_weights(start: f64, end: f64, h: f64, max_lag: usize) -> Vec<(usize, f64)> {
    let mut pts = vec![start, end];
    let first = (-end / h).ceil() as i64;
    let last = (-start / h).floor() as i64;
    for l in first..=last {
        let s = -(l as f64) * h;
        if s > start && s < end {
            pts.push(s);
        }
    }
    pts.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for w in pts.windows(2) {
        let half = 0.5 * (w[1] - w[0]);
        for x in [w[0], w[1]] {
            for (l, c) in lag_of(x, h, max_lag) {
                if c != 0.0 {
                    out.push((l, c * half));
                }
            }
        }
    }
    out
}

/// Precomputed stepping data for one problem.
pub struct Simulator {
    dim: usize,
    n_modes: usize,
    h: f64,
    steps: usize,
    max_lag: usize,
    horizon_r: f64,
    taps: Vec<(usize, DMatrix<f64>)>,
    linear: Linear,
    scheme: Scheme,
    diffusion: DiffusionSpec,
    kappa_lags: Vec<Lag>,
    noise: NoiseSpec,
    drift: DVector<f64>,
}

impl fmt::Debug for Simulator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Simulator")
            .field("dim", &self.dim)
            .field("h", &self.h)
            .field("steps", &self.steps)
            .field("max_lag", &self.max_lag)
            .field("scheme", &self.scheme)
            .finish()
    }
}

fn as_real_blocks(op: &BlockOperator) -> Option<Vec<Matrix2<f64>>> {
    let blocks = op.blocks()?;
    let mut out = Vec::with_capacity(blocks.len());
    for b in blocks {
        if b.iter().any(|z| z.im != 0.0) {
            return None;
        }
        out.push(b.map(|z| z.re));
    }
    Some(out)
}

fn is_multiple(x: f64, h: f64) -> Option<usize> {
    let q = x / h;
    let r = q.round();
    ((q - r).abs() <= 1e-9 * q.abs().max(1.0)).then_some(r as usize)
}

impl Simulator {
    pub fn new(
        op: &BlockOperator,
        kernel: &DelayKernel,
        diffusion: DiffusionSpec,
        noise: NoiseSpec,
        opts: SimOptions,
    ) -> Result<Self> {
        let h = opts.step;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid("simulation.h", "must be finite and > 0"));
        }
        if !(opts.horizon >= 0.0 && opts.horizon.is_finite()) {
            return Err(Error::invalid("simulation.T", "must be finite and ≥ 0"));
        }
        let steps = is_multiple(opts.horizon, h)
            .ok_or_else(|| Error::invalid("simulation.T", format!("T = {} is not a multiple of h = {h}", opts.horizon)))?;
        let k = if kernel.target() == KernelTarget::F {
            kernel.clone()
        } else {
            kernel.lift(op.sqrt_lambda())?
        };
        if k.dim() != op.dim() {
            return Err(Error::DimensionMismatch {
                context: "kernel vs state dimension",
                expected: op.dim(),
                found: k.dim(),
            });
        }
        let r = k.horizon();
        let max_lag = match is_multiple(r, h) {
            Some(l) if l >= 1 => l,
            _ => return Err(Error::invalid("simulation.h", format!("h = {h} must divide the delay r = {r}"))),
        };
        let dim = op.dim();
        if diffusion.state_dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "diffusion vs state dimension",
                expected: dim,
                found: diffusion.state_dim(),
            });
        }
        if diffusion.noise_dim() != noise.noise_dim() {
            return Err(Error::DimensionMismatch {
                context: "diffusion vs noise dimension",
                expected: noise.noise_dim(),
                found: diffusion.noise_dim(),
            });
        }
        let mut kappa_lags = Vec::new();
        for &(theta, _) in diffusion.kappa() {
            if theta < -r * (1.0 + 1e-12) {
                return Err(Error::invalid("diffusion.kappa", format!("atom at {theta} lies outside [−{r}, 0]")));
            }
            kappa_lags.push(lag_of(theta, h, max_lag));
        }

        let mut per_lag: Vec<Option<DMatrix<f64>>> = vec![None; max_lag + 1];
        let mut add = |l: usize, w: DMatrix<f64>| match &mut per_lag[l] {
            Some(m) => *m += w,
            None => per_lag[l] = Some(w),
        };
        for a in k.atoms() {
            for (l, c) in lag_of(a.theta, h, max_lag) {
                if c != 0.0 {
                    add(l, &a.weight * c);
                }
            }
        }
        for p in k.density() {
            for (l, c) in density_weights(p.start, p.end, h, max_lag) {
                add(l, &p.density * c);
            }
        }
        let taps: Vec<_> = per_lag
            .into_iter()
            .enumerate()
            .filter_map(|(l, m)| m.filter(|m| m.iter().any(|x| *x != 0.0)).map(|m| (l, m)))
            .collect();

        let linear = match (opts.scheme, as_real_blocks(op)) {
            (Scheme::DriftImplicit, Some(blocks)) => {
                let mut inv = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let m = Matrix2::identity() - b * h;
                    inv.push(m.try_inverse().ok_or(Error::Singular { what: "I − hΛ" })?);
                }
                Linear::Blocks(inv)
            }
            (Scheme::Explicit, Some(blocks)) => {
                check_explicit(op, h)?;
                Linear::Blocks(blocks.iter().map(|b| Matrix2::identity() + b * h).collect())
            }
            (scheme, None) => {
                let lam = op
                    .to_real_dense()
                    .ok_or_else(|| Error::Precondition("simulation needs real damping".into()))?;
                let id = DMatrix::<f64>::identity(dim, dim);
                match scheme {
                    Scheme::DriftImplicit => Linear::Dense(
                        (id - lam * h)
                            .try_inverse()
                            .ok_or(Error::Singular { what: "I − hΛ" })?,
                    ),
                    Scheme::Explicit => {
                        check_explicit(op, h)?;
                        Linear::Dense(id + lam * h)
                    }
                }
            }
        };
        let drift = noise.compensation(h);
        Ok(Simulator {
            dim,
            n_modes: op.n_modes(),
            h,
            steps,
            max_lag,
            horizon_r: r,
            taps,
            linear,
            scheme: opts.scheme,
            diffusion,
            kappa_lags,
            noise,
            drift,
        })
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delay(&self) -> f64 {
        self.horizon_r
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn diffusion(&self) -> &DiffusionSpec {
        &self.diffusion
    }

    fn slot(&self, k: isize) -> usize {
        k.rem_euclid(self.max_lag as isize + 1) as usize
    }

    fn start(&self, init: &InitialData) -> Result<PathState> {
        if init.state.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "initial state",
                expected: self.dim,
                found: init.state.len(),
            });
        }
        if init.history.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "initial history",
                expected: self.dim,
                found: init.history.dim(),
            });
        }
        if (init.history.horizon() - self.horizon_r).abs() > 1e-12 * self.horizon_r {
            return Err(Error::invalid("history", "horizon differs from the delay"));
        }
        let mut buf = vec![DVector::zeros(self.dim); self.max_lag + 1];
        for l in 1..=self.max_lag {
            buf[self.slot(-(l as isize))] = init.history.eval(-(l as f64) * self.h);
        }
        buf[0] = init.state.clone();
        let m = self.noise.noise_dim();
        Ok(PathState {
            k: 0,
            buf,
            rhs: DVector::zeros(self.dim),
            tmp: DVector::zeros(self.dim),
            jsum: DVector::zeros(self.dim),
            jstate: DVector::zeros(self.dim),
            delayed: vec![DVector::zeros(self.dim); self.kappa_lags.len()],
            lmat: DMatrix::zeros(self.dim, m),
            jumps: 0,
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng, inc: &mut Increment) {
        fill_gaussian(&self.noise, self.h, rng, &mut inc.dw);
        inc.dw += &self.drift;
        inc.jumps.clear();
        if let Some(j) = &self.noise.jump {
            let n = poisson_count(j.rate * self.h, rng);
            let mut timed = Vec::with_capacity(n);
            for _ in 0..n {
                let at = rng.random::<f64>();
                let r = j.law.sample(rng);
                let mut d = DVector::zeros(self.noise.noise_dim());
                j.draw_direction(rng, &mut d);
                if r >= j.truncation {
                    timed.push((at, d * r));
                }
            }
            timed.sort_by(|a, b| a.0.total_cmp(&b.0));
            inc.jumps.extend(timed.into_iter().map(|(_, z)| z));
        }
    }

    fn new_increment(&self) -> Increment {
        Increment {
            dw: DVector::zeros(self.noise.noise_dim()),
            jumps: Vec::new(),
        }
    }

    fn advance(&self, st: &mut PathState, inc: &Increment) -> Result<()> {
        let k = st.k as isize;
        let cur = self.slot(k);
        st.rhs.copy_from(&st.buf[cur]);
        for (lag, w) in &self.taps {
            let s = self.slot(k - *lag as isize);
            st.rhs.gemv(self.h, w, &st.buf[s], 1.0);
        }
        match &self.diffusion {
            DiffusionSpec::Additive(l) => {
                st.rhs.gemv(1.0, l, &inc.dw, 1.0);
                for z in &inc.jumps {
                    st.rhs.gemv(1.0, l, z, 1.0);
                }
            }
            DiffusionSpec::Nonlinear(d) => {
                for (i, lag) in self.kappa_lags.iter().enumerate() {
                    let (a, b) = (self.slot(k - lag[0].0 as isize), self.slot(k - lag[1].0 as isize));
                    st.delayed[i].copy_from(&st.buf[a]);
                    st.delayed[i] *= lag[0].1;
                    if lag[1].1 != 0.0 {
                        st.delayed[i].axpy(lag[1].1, &st.buf[b], 1.0);
                    }
                }
                (d.map)(&st.buf[cur], &st.delayed, &mut st.lmat);
                st.rhs.gemv(1.0, &st.lmat, &inc.dw, 1.0);
                if !inc.jumps.is_empty() {
                    // Each jump sees the left limit, i.e. the earlier jumps.
                    st.jsum.fill(0.0);
                    for z in &inc.jumps {
                        st.jstate.copy_from(&st.buf[cur]);
                        st.jstate += &st.jsum;
                        (d.map)(&st.jstate, &st.delayed, &mut st.lmat);
                        st.jsum.gemv(1.0, &st.lmat, z, 1.0);
                    }
                    st.rhs += &st.jsum;
                }
            }
        }
        st.jumps += inc.jumps.len();
        match self.scheme {
            Scheme::DriftImplicit => self.linear.apply(&st.rhs, &mut st.tmp),
            Scheme::Explicit => {
                self.linear.apply(&st.buf[cur], &mut st.tmp);
                st.tmp += &st.rhs;
                st.tmp -= &st.buf[cur];
            }
        }
        let next = self.slot(k + 1);
        std::mem::swap(&mut st.buf[next], &mut st.tmp);
        st.k += 1;
        let y = &st.buf[next];
        if y.iter().any(|x| !x.is_finite()) || y.norm_squared() > 1e300 {
            return Err(Error::Diverged {
                step: st.k,
                t: st.k as f64 * self.h,
            });
        }
        Ok(())
    }

    fn state<'a>(&self, st: &'a PathState) -> &'a DVector<f64> {
        &st.buf[self.slot(st.k as isize)]
    }

    /// Current state followed by `nodes` history values at
    /// `θ_j = −r + j·r/nodes`, `j < nodes`, each scaled by `√(r/nodes)` so
    /// that the Euclidean norm is the left-endpoint ℋ-norm.
    fn segment(&self, st: &PathState, nodes: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim * (nodes + 1));
        out.rows_mut(0, self.dim).copy_from(self.state(st));
        let w = (self.horizon_r / nodes as f64).sqrt();
        let k = st.k as isize;
        for j in 0..nodes {
            let theta = -self.horizon_r + j as f64 * self.horizon_r / nodes as f64;
            let lag = lag_of(theta, self.h, self.max_lag);
            let mut v = &st.buf[self.slot(k - lag[0].0 as isize)] * lag[0].1;
            if lag[1].1 != 0.0 {
                v.axpy(lag[1].1, &st.buf[self.slot(k - lag[1].0 as isize)], 1.0);
            }
            out.rows_mut(self.dim * (j + 1), self.dim).copy_from(&(v * w));
        }
        out
    }

    fn record_times(&self, every: usize) -> Vec<usize> {
        let every = every.max(1);
        (0..=self.steps).filter(|k| k % every == 0).collect()
    }

    /// One path; states recorded every `record_every` steps.
    pub fn simulate_path(&self, init: &InitialData, seed: u64, path: u64, record_every: usize) -> Result<Trajectory> {
        let mut rng = path_rng(seed, path);
        let mut st = self.start(init)?;
        let mut inc = self.new_increment();
        let every = record_every.max(1);
        let mut times = vec![0.0];
        let mut states = vec![init.state.clone()];
        for _ in 0..self.steps {
            self.draw(&mut rng, &mut inc);
            self.advance(&mut st, &inc)?;
            if st.k % every == 0 {
                times.push(st.k as f64 * self.h);
                states.push(self.state(&st).clone());
            }
        }
        Ok(Trajectory {
            times,
            states,
            jumps: st.jumps,
        })
    }

    /// Path driven by the given Wiener increments (no jumps).
    pub fn run_with_increments(&self, init: &InitialData, increments: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        if increments.len() != self.steps {
            return Err(Error::GridMismatch {
                expected: self.steps,
                found: increments.len(),
            });
        }
        let mut st = self.start(init)?;
        let mut inc = self.new_increment();
        let mut out = vec![init.state.clone()];
        for dw in increments {
            if dw.len() != inc.dw.len() {
                return Err(Error::DimensionMismatch {
                    context: "noise increment",
                    expected: inc.dw.len(),
                    found: dw.len(),
                });
            }
            inc.dw.copy_from(dw);
            self.advance(&mut st, &inc)?;
            out.push(self.state(&st).clone());
        }
        Ok(out)
    }

    /// Monte-Carlo moments over paths `0..paths`.
    pub fn moments(&self, init: &InitialData, paths: u64, seed: u64, record_every: usize) -> Result<MomentRecord> {
        let ks = self.record_times(record_every);
        let n = self.n_modes;
        let width = 1 + n;
        let parts = chunked(0..paths, |range| {
            let mut acc = vec![0.0; ks.len() * width];
            let mut jumps = 0;
            for p in range {
                let mut rng = path_rng(seed, p);
                let mut st = self.start(init)?;
                let mut inc = self.new_increment();
                let mut next = 0;
                for k in 0..=self.steps {
                    if k > 0 {
                        self.draw(&mut rng, &mut inc);
                        self.advance(&mut st, &inc)?;
                    }
                    if next < ks.len() && ks[next] == k {
                        let y = self.state(&st);
                        let row = &mut acc[next * width..(next + 1) * width];
                        for m in 0..n {
                            let e = y[m] * y[m] + y[n + m] * y[n + m];
                            row[1 + m] += e;
                            row[0] += e;
                        }
                        next += 1;
                    }
                }
                jumps += st.jumps;
            }
            Ok((acc, jumps))
        })?;
        let mut sums = vec![0.0; ks.len() * width];
        let mut jumps = 0;
        for (acc, j) in parts {
            for (s, a) in sums.iter_mut().zip(acc) {
                *s += a;
            }
            jumps += j;
        }
        let scale = 1.0 / paths.max(1) as f64;
        Ok(MomentRecord {
            times: ks.iter().map(|k| *k as f64 * self.h).collect(),
            mean_sq_norm: (0..ks.len()).map(|i| sums[i * width] * scale).collect(),
            per_mode: (0..ks.len())
                .map(|i| sums[i * width + 1..(i + 1) * width].iter().map(|x| x * scale).collect())
                .collect(),
            paths,
            jumps,
        })
    }

    /// Synchronously coupled paths from two initial data.
    pub fn paired_paths(
        &self,
        init_a: &InitialData,
        init_b: &InitialData,
        paths: u64,
        seed: u64,
        record_every: usize,
    ) -> Result<ContractionRecord> {
        let ks = self.record_times(record_every);
        let parts = chunked(0..paths, |range| {
            let mut acc = vec![0.0; 2 * ks.len()];
            for p in range {
                let mut rng = path_rng(seed, p);
                let mut a = self.start(init_a)?;
                let mut b = self.start(init_b)?;
                let mut inc = self.new_increment();
                let mut next = 0;
                for k in 0..=self.steps {
                    if k > 0 {
                        self.draw(&mut rng, &mut inc);
                        self.advance(&mut a, &inc)?;
                        self.advance(&mut b, &inc)?;
                    }
                    if next < ks.len() && ks[next] == k {
                        let (ya, yb) = (self.state(&a), self.state(&b));
                        acc[2 * next] += (ya - yb).norm_squared();
                        acc[2 * next + 1] += ya.norm_squared();
                        next += 1;
                    }
                }
            }
            Ok(acc)
        })?;
        let mut sums = vec![0.0; 2 * ks.len()];
        for acc in parts {
            for (s, a) in sums.iter_mut().zip(acc) {
                *s += a;
            }
        }
        let scale = 1.0 / paths.max(1) as f64;
        let times: Vec<f64> = ks.iter().map(|k| *k as f64 * self.h).collect();
        let mean_sq_diff: Vec<f64> = (0..ks.len()).map(|i| sums[2 * i] * scale).collect();
        let mean_sq_a: Vec<f64> = (0..ks.len()).map(|i| sums[2 * i + 1] * scale).collect();
        let rate = tail_decay_rate(&times, &mean_sq_diff);
        Ok(ContractionRecord {
            times,
            mean_sq_diff,
            mean_sq_norm: mean_sq_a,
            rate,
            paths,
        })
    }

    /// Segment states `(y(t), y_t)` at each of `times` for every path in
    /// `paths`, flattened with [`SEGMENT_NODES`] weighted history nodes.
    pub fn segment_samples(
        &self,
        init: &InitialData,
        paths: Range<u64>,
        seed: u64,
        times: &[f64],
    ) -> Result<Vec<Vec<DVector<f64>>>> {
        let mut ks = Vec::with_capacity(times.len());
        for &t in times {
            match is_multiple(t, self.h) {
                Some(k) if k <= self.steps => ks.push(k),
                _ => return Err(Error::invalid("checkpoints", format!("t = {t} is not a grid time in [0, T]"))),
            }
        }
        let last = ks.iter().copied().max().unwrap_or(0);
        let parts = chunked(paths, |range| {
            let mut out: Vec<Vec<DVector<f64>>> = vec![Vec::new(); ks.len()];
            for p in range {
                let mut rng = path_rng(seed, p);
                let mut st = self.start(init)?;
                let mut inc = self.new_increment();
                for k in 0..=last {
                    if k > 0 {
                        self.draw(&mut rng, &mut inc);
                        self.advance(&mut st, &inc)?;
                    }
                    for (i, kk) in ks.iter().enumerate() {
                        if *kk == k {
                            out[i].push(self.segment(&st, SEGMENT_NODES));
                        }
                    }
                }
            }
            Ok(out)
        })?;
        let mut all: Vec<Vec<DVector<f64>>> = vec![Vec::new(); ks.len()];
        for part in parts {
            for (dst, src) in all.iter_mut().zip(part) {
                dst.extend(src);
            }
        }
        Ok(all)
    }
}

/// History nodes per segment snapshot.
pub const SEGMENT_NODES: usize = 16;

fn check_explicit(op: &BlockOperator, h: f64) -> Result<()> {
    let mut worst: f64 = 0.0;
    let mut suggested = f64::INFINITY;
    for mu in op.eigenvalues() {
        worst = worst.max((mu * h + 1.0).norm());
        let n2 = mu.norm_sqr();
        if n2 > 0.0 {
            suggested = suggested.min(if mu.re < 0.0 { -2.0 * mu.re / n2 } else { 0.0 });
        }
    }
    if worst > 1.0 + 1e-12 {
        return Err(Error::UnstableStep {
            h,
            product: worst,
            limit: 1.0,
            suggested,
        });
    }
    Ok(())
}

struct PathState {
    k: usize,
    buf: Vec<DVector<f64>>,
    rhs: DVector<f64>,
    tmp: DVector<f64>,
    jsum: DVector<f64>,
    jstate: DVector<f64>,
    delayed: Vec<DVector<f64>>,
    lmat: DMatrix<f64>,
    jumps: usize,
}

struct Increment {
    dw: DVector<f64>,
    jumps: Vec<DVector<f64>>,
}

fn chunked<A: Send>(paths: Range<u64>, f: impl Fn(Range<u64>) -> Result<A> + Sync) -> Result<Vec<A>> {
    let starts: Vec<u64> = (paths.start..paths.end).step_by(CHUNK as usize).collect();
    starts
        .into_par_iter()
        .map(|s| f(s..(s + CHUNK).min(paths.end)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub jumps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRecord {
    pub times: Vec<f64>,
    /// `E‖y(t)‖²`.
    pub mean_sq_norm: Vec<f64>,
    /// `E[y_n² + y_{N+n}²]` per mode.
    pub per_mode: Vec<Vec<f64>>,
    pub paths: u64,
    pub jumps: usize,
}

impl MomentRecord {
    pub fn csv_header(&self) -> String {
        let n = self.per_mode.first().map_or(0, Vec::len);
        let modes: Vec<String> = (1..=n).map(|m| format!("mode_{m}")).collect();
        format!("t,mean_sq_norm,{},paths", modes.join(","))
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.times
            .iter()
            .zip(&self.mean_sq_norm)
            .zip(&self.per_mode)
            .map(|((t, m), modes)| {
                let modes: Vec<String> = modes.iter().map(|x| format!("{x:.12e}")).collect();
                format!("{t},{m:.12e},{},{}", modes.join(","), self.paths)
            })
            .collect()
    }

    /// Running supremum of `E‖y‖²`.
    pub fn running_sup(&self) -> Vec<f64> {
        running_sup(&self.mean_sq_norm)
    }
}

pub fn running_sup(v: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    v.iter()
        .map(|x| {
            m = m.max(*x);
            m
        })
        .collect()
}

/// `(last-quarter mean, last-half mean, relative gap)` of a series.
pub fn stabilization(v: &[f64]) -> (f64, f64, f64) {
    let n = v.len();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    let q = mean(&v[n - n / 4.max(1)..]);
    let h = mean(&v[n - n / 2.max(1)..]);
    let gap = if h != 0.0 { (q - h).abs() / h.abs() } else { (q - h).abs() };
    (q, h, gap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionRecord {
    pub times: Vec<f64>,
    /// `E‖y(t, φ) − y(t, ψ)‖²`.
    pub mean_sq_diff: Vec<f64>,
    /// `E‖y(t, φ)‖²` along the first path.
    pub mean_sq_norm: Vec<f64>,
    /// Fitted rate `ρ` in `E‖Δy‖² ≈ Ce^{−ρt}` on the tail half.
    pub rate: Option<f64>,
    pub paths: u64,
}

impl ContractionRecord {
    pub const CSV_HEADER: &'static str = "t,mean_sq_diff,mean_sq_norm";

    pub fn csv_rows(&self) -> Vec<String> {
        self.times
            .iter()
            .zip(&self.mean_sq_diff)
            .zip(&self.mean_sq_norm)
            .map(|((t, d), m)| format!("{t},{d:.12e},{m:.12e}"))
            .collect()
    }
}

/// Least-squares slope of `−log v` on the tail half (positive samples only).
pub fn tail_decay_rate(times: &[f64], values: &[f64]) -> Option<f64> {
    let start = times.len() / 2;
    let pts: Vec<(f64, f64)> = times[start..]
        .iter()
        .zip(&values[start..])
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

/// One path on a common grid; `(state, history)` via the step defaults.
pub fn simulate_path(
    op: &BlockOperator,
    kernel: &DelayKernel,
    diffusion: DiffusionSpec,
    noise: NoiseSpec,
    init: &InitialData,
    horizon: f64,
    h: f64,
    seed: u64,
) -> Result<Trajectory> {
    let sim = Simulator::new(op, kernel, diffusion, noise, SimOptions::new(horizon, h))?;
    sim.simulate_path(init, seed, 0, 1)
}

/// `steps` Wiener increments on a grid of step `h` for path `path`.
pub fn brownian_increments(noise: &NoiseSpec, h: f64, steps: usize, seed: u64, path: u64) -> Vec<DVector<f64>> {
    let mut rng = path_rng(seed, path);
    (0..steps)
        .map(|_| {
            let mut v = DVector::zeros(noise.noise_dim());
            fill_gaussian(noise, h, &mut rng, &mut v);
            v
        })
        .collect()
}

/// Sums consecutive groups of `factor` increments (same Brownian path on a
/// coarser grid).
pub fn coarsen_increments(inc: &[DVector<f64>], factor: usize) -> Vec<DVector<f64>> {
    inc.chunks(factor)
        .map(|c| c.iter().skip(1).fold(c[0].clone(), |acc, x| acc + x))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocCheck {
    pub max_deviation: f64,
    pub euler: Vec<DVector<f64>>,
    pub reconstruction: Vec<DVector<f64>>,
}

/// Euler–Maruyama path against
/// `G(t)φ₀ + ∫G(t+θ)(Sφ₁)(θ)dθ + Σ_k G(t − t_k)LΔW_k`
/// driven by the same increments. `green` sets the step and must cover the
/// horizon `increments.len()·h`.
pub fn variation_of_constants_check(
    op: &BlockOperator,
    kernel: &DelayKernel,
    l: &DMatrix<f64>,
    green: &GreenOperator,
    init: &InitialData,
    increments: &[DVector<f64>],
) -> Result<VocCheck> {
    let h = green.step();
    let steps = increments.len();
    if green.samples().len() < steps + 1 {
        return Err(Error::Precondition(format!(
            "Green operator covers {} steps, need {steps}",
            green.samples().len() - 1
        )));
    }
    let noise = NoiseSpec::wiener(vec![1.0; l.ncols()])?;
    let sim = Simulator::new(
        op,
        kernel,
        DiffusionSpec::Additive(l.clone()),
        noise,
        SimOptions::new(steps as f64 * h, h),
    )?;
    let euler = sim.run_with_increments(init, increments)?;

    let r = sim.delay();
    let m = sim.max_lag;
    let history = HistorySegment::from_fn(r, m, |theta| init.history.eval(theta))?;
    let deterministic = voc_reconstruct(green, kernel, op, &init.state, &history)?;
    let kicks: Vec<DVector<f64>> = increments.iter().map(|dw| l * dw).collect();
    let g = green.samples();
    let mut reconstruction = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let mut y = deterministic[n].clone();
        for (k, kick) in kicks.iter().enumerate().take(n) {
            y.gemv(1.0, &g[n - k], kick, 1.0);
        }
        reconstruction.push(y);
    }
    let max_deviation = euler
        .iter()
        .zip(&reconstruction)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    Ok(VocCheck {
        max_deviation,
        euler,
        reconstruction,
    })
}
