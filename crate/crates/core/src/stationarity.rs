//! Sufficient conditions for a unique stationary distribution, a
//! bounded-Lipschitz distance estimate between empirical laws, and the
//! Cauchy-in-law diagnostic.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::delay::DecayFit;
use crate::sim::{path_rng, DiffusionSpec, InitialData, NoiseSpec, Simulator};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Theorem {
    /// `2γ > 3M²(α₁ + α₂e^{2γr}κ([−r, 0]))`.
    Wiener,
    /// `2γ > 3M²(Tr Q + ∫‖z‖²ν)(α₁ + α₂e^{2γr}κ([−r, 0]))`.
    Levy,
    /// Additive pure-jump noise: `∫_{‖z‖>1}‖z‖ν(dz) < ∞` with `γ > 0`.
    LevyAdditive,
}

impl Theorem {
    pub fn as_str(self) -> &'static str {
        match self {
            Theorem::Wiener => "wiener",
            Theorem::Levy => "levy",
            Theorem::LevyAdditive => "levy_additive",
        }
    }
}

/// Where the constants of `‖e^{t𝒜}‖ ≤ Me^{−γt}` came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecaySource {
    Lyapunov,
    InverseNorm,
    GreenFit,
    /// Taken verbatim from the damped-wave example (`M = 1`).
    ExampleLiteral,
    User,
}

impl DecaySource {
    pub fn as_str(self) -> &'static str {
        match self {
            DecaySource::Lyapunov => "lyapunov",
            DecaySource::InverseNorm => "inverse_norm",
            DecaySource::GreenFit => "green_fit",
            DecaySource::ExampleLiteral => "example_literal",
            DecaySource::User => "user",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayConstants {
    pub m: f64,
    pub gamma: f64,
    pub source: DecaySource,
}

impl DecayConstants {
    pub fn new(m: f64, gamma: f64, source: DecaySource) -> Self {
        DecayConstants { m, gamma, source }
    }

    /// `M = √(γ₊/γ₋)`, `γ = 1/(2γ₊)`.
    pub fn from_lyapunov(gamma_minus: f64, gamma_plus: f64) -> Result<Self> {
        let (m, gamma) = crate::spectral::decay_envelope(gamma_minus, gamma_plus)?;
        Ok(DecayConstants::new(m, gamma, DecaySource::Lyapunov))
    }

    pub fn from_green_fit(fit: &DecayFit) -> Result<Self> {
        if fit.degenerate || !fit.decaying {
            return Err(Error::Precondition("Green operator fit is not decaying".into()));
        }
        Ok(DecayConstants::new(fit.m, fit.gamma, DecaySource::GreenFit))
    }

    fn validate(&self) -> Result<()> {
        if !(self.m >= 1.0 && self.m.is_finite()) {
            return Err(Error::invalid("M", format!("must be finite and ≥ 1, got {}", self.m)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", format!("must be finite and > 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerdictInputs {
    pub m: f64,
    pub gamma: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub r: f64,
    pub kappa_mass: f64,
    pub trace_q: f64,
    pub jump_second_moment: f64,
    pub jump_first_tail: f64,
}

/// `holds ⇔ lhs > rhs` for [`Theorem::Wiener`] and [`Theorem::Levy`];
/// `holds ⇔ lhs < rhs` (finite tail moment) for [`Theorem::LevyAdditive`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityVerdict {
    pub theorem: Theorem,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub inputs: VerdictInputs,
    pub source: DecaySource,
}

impl StationarityVerdict {
    pub const CSV_HEADER: &'static str =
        "theorem,lhs,rhs,holds,M,gamma,alpha1,alpha2,r,kappa_mass,trace_q,jump_second_moment,jump_first_tail,decay_source";

    pub fn csv_row(&self) -> String {
        let i = &self.inputs;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.theorem.as_str(),
            self.lhs,
            self.rhs,
            self.holds,
            i.m,
            i.gamma,
            i.alpha1,
            i.alpha2,
            i.r,
            i.kappa_mass,
            i.trace_q,
            i.jump_second_moment,
            i.jump_first_tail,
            self.source.as_str()
        )
    }
}

fn check_lipschitz(alpha1: f64, alpha2: f64, r: f64, kappa_mass: f64) -> Result<()> {
    for (name, v) in [("alpha1", alpha1), ("alpha2", alpha2), ("r", r), ("kappa_mass", kappa_mass)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, format!("must be finite and ≥ 0, got {v}")));
        }
    }
    Ok(())
}

fn lipschitz_term(d: &DecayConstants, alpha1: f64, alpha2: f64, r: f64, kappa_mass: f64) -> f64 {
    3.0 * d.m * d.m * (alpha1 + alpha2 * (2.0 * d.gamma * r).exp() * kappa_mass)
}

pub fn sufficient_condition_wiener(
    decay: &DecayConstants,
    alpha1: f64,
    alpha2: f64,
    r: f64,
    kappa_mass: f64,
) -> Result<StationarityVerdict> {
    decay.validate()?;
    check_lipschitz(alpha1, alpha2, r, kappa_mass)?;
    let lhs = 2.0 * decay.gamma;
    let rhs = lipschitz_term(decay, alpha1, alpha2, r, kappa_mass);
    Ok(StationarityVerdict {
        theorem: Theorem::Wiener,
        lhs,
        rhs,
        holds: lhs > rhs,
        inputs: VerdictInputs {
            m: decay.m,
            gamma: decay.gamma,
            alpha1,
            alpha2,
            r,
            kappa_mass,
            trace_q: 1.0,
            jump_second_moment: 0.0,
            jump_first_tail: 0.0,
        },
        source: decay.source,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn sufficient_condition_levy(
    decay: &DecayConstants,
    alpha1: f64,
    alpha2: f64,
    r: f64,
    kappa_mass: f64,
    trace_q: f64,
    second_moment_nu: f64,
) -> Result<StationarityVerdict> {
    decay.validate()?;
    check_lipschitz(alpha1, alpha2, r, kappa_mass)?;
    if second_moment_nu.is_infinite() {
        return Err(Error::InfiniteSecondMoment);
    }
    if !(trace_q >= 0.0 && trace_q.is_finite() && second_moment_nu >= 0.0) {
        return Err(Error::invalid("noise moments", format!("Tr Q = {trace_q}, ∫‖z‖²ν = {second_moment_nu}")));
    }
    let lhs = 2.0 * decay.gamma;
    let rhs = (trace_q + second_moment_nu) * lipschitz_term(decay, alpha1, alpha2, r, kappa_mass);
    Ok(StationarityVerdict {
        theorem: Theorem::Levy,
        lhs,
        rhs,
        holds: lhs > rhs,
        inputs: VerdictInputs {
            m: decay.m,
            gamma: decay.gamma,
            alpha1,
            alpha2,
            r,
            kappa_mass,
            trace_q,
            jump_second_moment: second_moment_nu,
            jump_first_tail: f64::NAN,
        },
        source: decay.source,
    })
}

/// Additive pure-jump case: needs no Gaussian part, additive diffusion, a
/// finite first tail moment of `ν` and exponential stability.
pub fn levy_additive_condition(
    noise: &NoiseSpec,
    diffusion: &DiffusionSpec,
    decay: &DecayConstants,
) -> Result<StationarityVerdict> {
    if noise.has_gaussian_part() {
        return Err(Error::WrongTheorem(
            "the additive jump condition requires noise without a Gaussian part".into(),
        ));
    }
    if !diffusion.is_additive() {
        return Err(Error::WrongTheorem("the additive jump condition requires additive diffusion".into()));
    }
    decay.validate()?;
    let tail = noise.jump_first_tail_moment();
    Ok(StationarityVerdict {
        theorem: Theorem::LevyAdditive,
        lhs: tail,
        rhs: f64::INFINITY,
        holds: tail < f64::INFINITY,
        inputs: VerdictInputs {
            m: decay.m,
            gamma: decay.gamma,
            alpha1: 0.0,
            alpha2: 0.0,
            r: 0.0,
            kappa_mass: 0.0,
            trace_q: 0.0,
            jump_second_moment: noise.jump_second_moment(),
            jump_first_tail: tail,
        },
        source: decay.source,
    })
}

/// Picks the applicable condition: Wiener noise → [`Theorem::Wiener`] (the
/// declared constants scaled by `Tr Q`); jumps with finite second moment →
/// [`Theorem::Levy`]; otherwise the additive jump condition.
pub fn stationarity_verdict(
    noise: &NoiseSpec,
    diffusion: &DiffusionSpec,
    decay: &DecayConstants,
    r: f64,
) -> Result<StationarityVerdict> {
    let (a1, a2, kappa) = diffusion.lipschitz_constants();
    match noise.jump() {
        None => {
            let q = noise.trace_q();
            let mut v = sufficient_condition_wiener(decay, a1 * q, a2 * q, r, kappa)?;
            v.inputs.trace_q = q;
            Ok(v)
        }
        Some(_) if noise.second_moment_finite() => {
            sufficient_condition_levy(decay, a1, a2, r, kappa, noise.trace_q(), noise.jump_second_moment())
        }
        Some(_) => levy_additive_condition(noise, diffusion, decay),
    }
}

/// Thresholds of the damped delay wave example
/// `u_tt + 2αu_t = u_ξξ + c₁u_ξ(t−1) + c₂u_t(t−1) + βu(t−1)/(1+|u|)·ẇ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleThresholds {
    pub alpha: f64,
    pub c_sum: f64,
    /// `απ/(36α + π)`.
    pub delay_bound: f64,
    /// `ln(delay_bound/(|c₁| + |c₂|))`.
    pub gamma: Option<f64>,
    /// `(2/3)γe^{−2γ}`.
    pub beta_max: Option<f64>,
    pub reason: Option<String>,
    /// `π/(4α + 2)`, as printed for `(‖A^{−1/2}BA^{−1/2}‖ + 2‖A^{−1/2}‖)^{−1}`.
    pub literal_constant: f64,
    /// The same quantity evaluated directly with `λ₁ = π²`, `‖B‖ = 2α`:
    /// `π²/(2α + 2π)`.
    pub direct_constant: f64,
}

impl ExampleThresholds {
    pub const CSV_HEADER: &'static str = "alpha,c_sum,delay_bound,gamma,beta_max,literal_constant,direct_constant,reason";

    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{},{},{}",
            self.alpha,
            self.c_sum,
            self.delay_bound,
            opt(self.gamma),
            opt(self.beta_max),
            self.literal_constant,
            self.direct_constant,
            self.reason.as_deref().unwrap_or("")
        )
    }
}

pub fn example_thresholds(alpha: f64, c1: f64, c2: f64) -> Result<ExampleThresholds> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", "must be finite and > 0"));
    }
    if !(c1.is_finite() && c2.is_finite()) {
        return Err(Error::invalid("c1, c2", "must be finite"));
    }
    let c_sum = c1.abs() + c2.abs();
    let delay_bound = alpha * PI / (36.0 * alpha + PI);
    let (gamma, beta_max, reason) = if c_sum == 0.0 {
        (None, None, Some("c1 = c2 = 0: gamma is undefined (needs c1 != 0 or c2 != 0)".to_string()))
    } else if c_sum >= delay_bound {
        (None, None, Some(format!("|c1| + |c2| = {c_sum} is not below the delay bound {delay_bound}")))
    } else {
        let g = (delay_bound / c_sum).ln();
        (Some(g), Some(2.0 / 3.0 * g * (-2.0 * g).exp()), None)
    };
    Ok(ExampleThresholds {
        alpha,
        c_sum,
        delay_bound,
        gamma,
        beta_max,
        reason,
        literal_constant: PI / (4.0 * alpha + 2.0),
        direct_constant: PI * PI / (2.0 * alpha + 2.0 * PI),
    })
}

/// Uniformly weighted segment states `(y(t), y_t)`, flattened so that the
/// Euclidean norm is the discretised ℋ-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    samples: Vec<DVector<f64>>,
    time_label: f64,
}

impl EmpiricalMeasure {
    pub fn new(samples: Vec<DVector<f64>>, time_label: f64) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptySample)?;
        let dim = first.len();
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "empirical measure samples",
                expected: dim,
                found: bad.len(),
            });
        }
        Ok(EmpiricalMeasure { samples, time_label })
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub fn time_label(&self) -> f64 {
        self.time_label
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for s in &self.samples {
            m += s;
        }
        m / self.samples.len() as f64
    }

    fn average(&self, f: impl Fn(&DVector<f64>) -> f64) -> f64 {
        self.samples.iter().map(f).sum::<f64>() / self.samples.len() as f64
    }
}

fn clip(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Lower bound on the bounded-Lipschitz distance: the largest
/// `|∫f dμ₁ − ∫f dμ₂|` over a seeded dictionary of 1-Lipschitz functionals
/// bounded by 1. The first functional projects on the mean-difference
/// direction with offset at the midpoint; the rest are random projections
/// and distance-to-centre functionals, each clipped to `[−1, 1]`. A larger
/// dictionary under the same seed extends the smaller one.
pub fn bl_metric_estimate(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    dictionary_size: usize,
    seed: u64,
) -> Result<f64> {
    if mu1.dim() != mu2.dim() {
        return Err(Error::DimensionMismatch {
            context: "empirical measures",
            expected: mu1.dim(),
            found: mu2.dim(),
        });
    }
    let dim = mu1.dim();
    let (m1, m2) = (mu1.mean(), mu2.mean());
    let centre = (&m1 + &m2) * 0.5;
    let mut best: f64 = 0.0;
    let mut eval = |f: &dyn Fn(&DVector<f64>) -> f64| {
        let d = (mu1.average(f) - mu2.average(f)).abs();
        best = best.max(d);
    };
    if dictionary_size == 0 {
        return Ok(0.0);
    }
    let diff = &m1 - &m2;
    let dn = diff.norm();
    if dn > 0.0 {
        let dir = diff / dn;
        let off = dir.dot(&centre);
        eval(&|x| clip(dir.dot(x) - off));
    }
    let pooled = |f: &dyn Fn(&DVector<f64>) -> f64| 0.5 * (mu1.average(f) + mu2.average(f));
    let mut rng = path_rng(seed, 0);
    for i in 1..dictionary_size {
        if i % 4 == 0 {
            let radius = pooled(&|x| (x - &centre).norm()) * (0.5 + rng.random::<f64>());
            eval(&|x| clip((x - &centre).norm() - radius));
        } else {
            let mut dir = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = dir.norm();
            if n == 0.0 {
                continue;
            }
            dir /= n;
            let mean = pooled(&|x| dir.dot(x));
            let spread = pooled(&|x| (dir.dot(x) - mean).powi(2)).sqrt();
            let off = mean + spread * rng.sample::<f64, _>(StandardNormal);
            eval(&|x| clip(dir.dot(x) - off));
        }
    }
    Ok(best.min(2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauchyRow {
    pub t: f64,
    pub s: f64,
    pub d_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauchyTable {
    pub rows: Vec<CauchyRow>,
    pub block_paths: u64,
    pub dictionary_size: usize,
    pub warning: Option<String>,
}

impl CauchyTable {
    pub const CSV_HEADER: &'static str = "t,s,d_hat";

    pub fn csv_rows(&self) -> Vec<String> {
        self.rows.iter().map(|r| format!("{},{},{:.12e}", r.t, r.s, r.d_hat)).collect()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].d_hat < w[0].d_hat)
    }
}

/// `d̂(law_t, law_{t+s})` for each checkpoint. Each law is built from its
/// own block of `block_paths` paths, so no path is reused across times.
/// `verdict`, when given and failing, is echoed as a warning.
#[allow(clippy::too_many_arguments)]
pub fn cauchy_diagnostic(
    sim: &Simulator,
    init: &InitialData,
    checkpoints: &[f64],
    offset: f64,
    block_paths: u64,
    dictionary_size: usize,
    seed: u64,
    verdict: Option<&StationarityVerdict>,
) -> Result<CauchyTable> {
    if block_paths == 0 {
        return Err(Error::invalid("paths", "need at least one path per block"));
    }
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("checkpoints", "must be strictly increasing"));
    }
    let mut rows = Vec::with_capacity(checkpoints.len());
    for (i, &t) in checkpoints.iter().enumerate() {
        let b = 2 * i as u64;
        let now = sim.segment_samples(init, b * block_paths..(b + 1) * block_paths, seed, &[t])?;
        let later = sim.segment_samples(init, (b + 1) * block_paths..(b + 2) * block_paths, seed, &[t + offset])?;
        let mu1 = EmpiricalMeasure::new(now.into_iter().next().unwrap_or_default(), t)?;
        let mu2 = EmpiricalMeasure::new(later.into_iter().next().unwrap_or_default(), t + offset)?;
        rows.push(CauchyRow {
            t,
            s: offset,
            d_hat: bl_metric_estimate(&mu1, &mu2, dictionary_size, seed)?,
        });
    }
    let warning = verdict
        .filter(|v| !v.holds)
        .map(|v| format!("sufficient condition ({}) fails: lhs = {}, rhs = {}", v.theorem.as_str(), v.lhs, v.rhs));
    Ok(CauchyTable {
        rows,
        block_paths,
        dictionary_size,
        warning,
    })
}

/// `d̂` between the time-`t` laws started from two initial data, each from
/// its own block of paths.
pub fn uniqueness_diagnostic(
    sim: &Simulator,
    init_a: &InitialData,
    init_b: &InitialData,
    t: f64,
    block_paths: u64,
    dictionary_size: usize,
    seed: u64,
) -> Result<f64> {
    let a = sim.segment_samples(init_a, 0..block_paths, seed, &[t])?;
    let b = sim.segment_samples(init_b, block_paths..2 * block_paths, seed, &[t])?;
    let mu1 = EmpiricalMeasure::new(a.into_iter().next().unwrap_or_default(), t)?;
    let mu2 = EmpiricalMeasure::new(b.into_iter().next().unwrap_or_default(), t)?;
    bl_metric_estimate(&mu1, &mu2, dictionary_size, seed)
}

/// `E‖Y(t)‖²_ℋ = E‖y(t)‖² + ∫_{t−r}^t E‖y(s)‖²ds` from a record of
/// `E‖y‖²` on a uniform grid, with the initial history's norm used for
/// `s < 0`. Trapezoidal in `s`.
pub fn segment_second_moment(times: &[f64], mean_sq: &[f64], r: f64, init: &InitialData) -> Vec<f64> {
    if times.len() < 2 {
        return mean_sq.to_vec();
    }
    let dt = times[1] - times[0];
    let lag = (r / dt).round() as usize;
    let hist = |s: f64| init.history.eval(s.max(-r)).norm_squared();
    let value = |i: isize| -> f64 {
        if i >= 0 {
            mean_sq[i as usize]
        } else {
            hist(i as f64 * dt)
        }
    };
    (0..times.len())
        .map(|k| {
            let k = k as isize;
            let mut integral = 0.0;
            for j in (k - lag as isize)..k {
                integral += 0.5 * (value(j) + value(j + 1)) * dt;
            }
            mean_sq[k as usize] + integral
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_at_unit_damping() {
        let t = example_thresholds(1.0, 0.04, 0.0).unwrap();
        assert!((t.delay_bound - 0.080_26).abs() < 1e-5);
        assert!((t.gamma.unwrap() - 0.6964).abs() < 1e-3);
        assert!((t.beta_max.unwrap() - 0.1153).abs() < 1e-4);
        assert!(t.reason.is_none());
        assert!((t.literal_constant - PI / 6.0).abs() < 1e-15);
        assert!((t.direct_constant - PI * PI / (2.0 + 2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn thresholds_without_delay_have_no_gamma() {
        let t = example_thresholds(1.0, 0.0, 0.0).unwrap();
        assert!(t.gamma.is_none() && t.beta_max.is_none());
        assert!(t.reason.unwrap().contains("undefined"));
        let t = example_thresholds(1.0, 0.1, 0.0).unwrap();
        assert!(t.gamma.is_none());
        assert!(example_thresholds(0.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn wiener_examples() {
        let d = DecayConstants::new(1.0, 0.6965, DecaySource::ExampleLiteral);
        let v = sufficient_condition_wiener(&d, 0.01, 0.01, 1.0, 1.0).unwrap();
        assert!((v.rhs - 3.0 * (0.01 + 0.01 * (1.393f64).exp())).abs() < 1e-12);
        assert!((v.rhs - 0.1508).abs() < 1e-3);
        assert!(v.holds);
        let v = sufficient_condition_wiener(&d, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((v.rhs - 15.08).abs() < 0.01);
        assert!(!v.holds);
        let v = sufficient_condition_wiener(&DecayConstants::new(3.0, 1e-6, DecaySource::User), 0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(v.holds);
    }

    #[test]
    fn invalid_constants_rejected() {
        let bad = DecayConstants::new(0.5, 1.0, DecaySource::User);
        assert!(sufficient_condition_wiener(&bad, 0.0, 0.0, 1.0, 1.0).is_err());
        let bad = DecayConstants::new(1.0, 0.0, DecaySource::User);
        assert!(sufficient_condition_wiener(&bad, 0.0, 0.0, 1.0, 1.0).is_err());
        let ok = DecayConstants::new(1.0, 1.0, DecaySource::User);
        assert!(sufficient_condition_wiener(&ok, -1.0, 0.0, 1.0, 1.0).is_err());
        assert_eq!(
            sufficient_condition_levy(&ok, 0.0, 0.0, 1.0, 1.0, 1.0, f64::INFINITY),
            Err(Error::InfiniteSecondMoment)
        );
    }

    #[test]
    fn empirical_measure_validation() {
        assert_eq!(EmpiricalMeasure::new(vec![], 0.0), Err(Error::EmptySample));
        assert!(EmpiricalMeasure::new(vec![DVector::zeros(2), DVector::zeros(3)], 0.0).is_err());
    }
}
