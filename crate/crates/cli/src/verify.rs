//! Desk-scale versions of the acceptance checks, one row per criterion.
//!
//! Rows 2–5 and 7 run on the configured operator when it fits the check,
//! rows 9–10 on the configured wave example; otherwise they fall back to the
//! reference instances (Dirichlet modes, `B = −2I`, `c₁ = 0.04`, `β = 0.1`).

use memwave::delay::{delay_semigroup_decay, green_operator, stability_criterion, BGrid, DelayKernel};
use memwave::operator::{build_reduction, inverse_norm, BlockOperator, DampingSpec, SpectralOperator};
use memwave::scenario::WaveScenario;
use memwave::sim::{
    brownian_increments, coarsen_increments, running_sup, stabilization, variation_of_constants_check, DiffusionSpec,
    InitialData, JumpSpec, NoiseSpec, NormLaw, SimOptions, Simulator,
};
use memwave::spectral::{
    decay_envelope, gamma_bounds, gpg_numeric_growth_bound, growth_bound_estimate, growth_bound_from_operator_norms,
    inverse_norm_surrogate, lyapunov_residual, lyapunov_solution, resolvent_bound_imag_axis,
    resolvent_constant_from_lower_bound, resolvent_norm, spectral_bound_scalar_damping, GpgOptions,
};
use memwave::stationarity::{
    cauchy_diagnostic, example_thresholds, levy_additive_condition, segment_second_moment, sufficient_condition_levy,
    sufficient_condition_wiener, uniqueness_diagnostic, DecayConstants, DecaySource, Theorem,
};
use memwave::C64;
use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::commands::{bgrid, scalar_alpha, simulator};
use crate::config::{DiffusionConfig, Experiment};
use crate::error::CliError;
use crate::output::{num, Output};

pub struct Check {
    pub name: &'static str,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
    pub detail: String,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vector(r: &mut ChaCha8Rng, dim: usize) -> DVector<C64> {
    DVector::from_fn(dim, |_, _| C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
}

fn block_abscissa(b: C64, lambda: f64) -> f64 {
    let disc = (b * b - C64::new(4.0 * lambda, 0.0)).sqrt();
    ((b + disc) * 0.5).re.max(((b - disc) * 0.5).re)
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// The configured `(A, α)` when `B = −αI`, else the reference `α = 2`, `N = 32`.
fn lyapunov_instance(exp: &Experiment) -> Result<(SpectralOperator, f64, BlockOperator, &'static str), CliError> {
    if let Some(alpha) = scalar_alpha(&exp.damping) {
        return Ok((exp.a.clone(), alpha, exp.op.clone(), "config"));
    }
    let a = SpectralOperator::dirichlet_laplacian(32);
    let op = build_reduction(&a, &DampingSpec::Scalar(-2.0))?;
    Ok((a, 2.0, op, "reference"))
}

fn c01() -> Check {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let beta = r.random_range(-10.0..0.0);
        let n = r.random_range(1..=64);
        let lam: Vec<f64> = (0..n).map(|_| r.random_range(0.01..500.0)).collect();
        let lmin = lam.iter().cloned().fold(f64::INFINITY, f64::min);
        let formula = spectral_bound_scalar_damping(beta, -lmin);
        let oracle = lam
            .iter()
            .map(|&l| {
                let s = l.sqrt();
                Matrix2::new(0.0, s, -s, beta)
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| z.re)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((formula - oracle).abs());
    }
    Check {
        name: "c01_spectral_formula",
        measured: worst,
        bound: 1e-10,
        pass: worst <= 1e-10,
        detail: "200 random (beta, lambda) instances vs 2x2 block eigenvalues".into(),
    }
}

fn c02(exp: &Experiment, out: &mut Output) -> Result<Check, CliError> {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    let mut source = "20 random instances";
    if let Some(alpha) = scalar_alpha(&exp.damping) {
        let mut p = lyapunov_solution(alpha, &exp.a)?;
        if exp.config.verify.fault.as_deref() == Some("lyapunov") {
            out.warn("fault injection: perturbing the Lyapunov operator by 1e-3");
            p = p.perturbed(0, 0, 1e-3)?;
        }
        for _ in 0..200 {
            worst = worst.max(lyapunov_residual(&p, &exp.op, &random_vector(&mut r, exp.op.dim()))?);
        }
        source = "config operator and 20 random instances";
    }
    for _ in 0..20 {
        let alpha = 10f64.powf(r.random_range(-1.5..1.5));
        let n = r.random_range(1..=32);
        let mut lam: Vec<f64> = (0..n).map(|_| 10f64.powf(r.random_range(-1.0..4.0))).collect();
        lam.sort_by(f64::total_cmp);
        let a = SpectralOperator::new(lam, "random")?;
        let op = build_reduction(&a, &DampingSpec::Scalar(-alpha))?;
        let p = lyapunov_solution(alpha, &a)?;
        for _ in 0..20 {
            worst = worst.max(lyapunov_residual(&p, &op, &random_vector(&mut r, op.dim()))?);
        }
    }
    Ok(Check {
        name: "c02_lyapunov_residual",
        measured: worst,
        bound: 1e-10,
        pass: worst <= 1e-10,
        detail: source.into(),
    })
}

fn c03(exp: &Experiment) -> Result<Check, CliError> {
    let (a, alpha, op, source) = lyapunov_instance(exp)?;
    let p = lyapunov_solution(alpha, &a)?;
    let (gm, gp) = gamma_bounds(alpha, a.omega_s_neg())?;
    let dim = op.dim();
    let mut r = rng(3);
    let tol = 1e-12;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut outside = 0;
    let mut probe = |q: f64| {
        if q < gm - tol || q > gp + tol {
            outside += 1;
        }
        lo = lo.min(q);
        hi = hi.max(q);
    };
    for _ in 0..1000 {
        probe(p.rayleigh_quotient(&random_vector(&mut r, dim))?);
    }
    // Power iteration on P and on (γ₊ + 1)I − P.
    let shift = gp + 1.0;
    for _ in 0..4 {
        let mut up = DVector::from_fn(dim, |_, _| C64::new(r.random_range(-1.0..1.0), 0.0));
        let mut down = up.clone();
        for _ in 0..400 {
            up = p.apply(&up)?;
            up /= C64::new(up.norm(), 0.0);
            let pd = p.apply(&down)?;
            down = &down * C64::new(shift, 0.0) - pd;
            down /= C64::new(down.norm(), 0.0);
        }
        probe(p.rayleigh_quotient(&up)?);
        probe(p.rayleigh_quotient(&down)?);
    }
    let gap = ((lo - gm) / gm).max((gp - hi) / gp);
    Ok(Check {
        name: "c03_envelope_containment",
        measured: gap,
        bound: 0.05,
        pass: outside == 0 && gap <= 0.05,
        detail: format!("{source}: gamma- {gm:.6}, gamma+ {gp:.6}, observed [{lo:.6}, {hi:.6}], {outside} outside"),
    })
}

fn c04(exp: &Experiment) -> Result<Check, CliError> {
    let (a, alpha, op, source) = lyapunov_instance(exp)?;
    let (gm, gp) = gamma_bounds(alpha, a.omega_s_neg())?;
    let (m, mu) = decay_envelope(gm, gp)?;
    let dense = op
        .to_real_dense()
        .ok_or_else(|| CliError::Usage("verify: operator has no real form".into()))?;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..=500 {
        let t = 0.1 * k as f64;
        worst = worst.max(spectral_norm(&(&dense * t).exp()) - m * (-mu * t).exp());
    }
    Ok(Check {
        name: "c04_decay_envelope",
        measured: worst,
        bound: 1e-9,
        pass: worst <= 1e-9,
        detail: format!("{source}: M {m:.6}, rate {mu:.6}, t in [0, 50]"),
    })
}

fn c05(exp: &Experiment) -> Result<Check, CliError> {
    let n = exp.n_modes();
    let use_config = exp.damping.alpha(n) > 0.0 && exp.damping.gamma(n).is_some();
    let (a, damping, op, source) = if use_config {
        (exp.a.clone(), exp.damping.clone(), exp.op.clone(), "config")
    } else {
        let a = SpectralOperator::dirichlet_laplacian(32);
        let d = DampingSpec::Scalar(-2.0);
        let op = build_reduction(&a, &d)?;
        (a, d, op, "reference")
    };
    let n = a.n_modes();
    let alpha_b = damping.alpha(n);
    let gamma_b = damping.gamma(n).unwrap_or(0.0);
    let inv = inverse_norm(&op)?;
    let constant = resolvent_constant_from_lower_bound(alpha_b, gamma_b, 1.0 / inverse_norm_surrogate(&a, &damping)?)?;
    let bounds = [0.25, 0.5, 0.75]
        .iter()
        .map(|&c| resolvent_bound_imag_axis(alpha_b, gamma_b, inv, c))
        .collect::<Result<Vec<_>, _>>()?;
    let top = a.sqrt_eigenvalues().last().copied().unwrap_or(1.0);
    let cutoff = 4.0 * (top + damping.operator_norm(n));
    let mut margin = f64::INFINITY;
    for k in 0..=2000 {
        let b = -cutoff + 2.0 * cutoff * k as f64 / 2000.0;
        let r = resolvent_norm(&op, C64::new(0.0, b))?;
        margin = margin.min(constant - r);
        for rb in &bounds {
            margin = margin.min(rb.at(b) - r);
        }
    }
    Ok(Check {
        name: "c05_resolvent_bounds",
        measured: margin,
        bound: 0.0,
        pass: margin >= 0.0,
        detail: format!("{source}: min(bound - |R(ib)|) over 2001 points in [-{cutoff:.1}, {cutoff:.1}]"),
    })
}

fn c06() -> Result<Check, CliError> {
    let mut r = rng(6);
    let mut violations = 0;
    let opts = GpgOptions {
        b_points: 300,
        refine_peaks: 2,
        ..GpgOptions::default()
    };
    let a_grid: Vec<f64> = (0..=40).map(|k| -0.05 * k as f64).collect();
    for _ in 0..20 {
        let n = r.random_range(1..=8);
        let mut lam: Vec<f64> = (0..n).map(|_| r.random_range(0.5..400.0)).collect();
        lam.sort_by(f64::total_cmp);
        let diag: Vec<C64> = (0..n)
            .map(|_| C64::new(-r.random_range(0.05..6.0), r.random_range(-5.0..5.0)))
            .collect();
        let a = SpectralOperator::new(lam.clone(), "random")?;
        let damping = DampingSpec::Diagonal(diag.clone());
        let op = build_reduction(&a, &damping)?;
        let exact = diag
            .iter()
            .zip(&lam)
            .map(|(&b, &l)| block_abscissa(b, l))
            .fold(f64::NEG_INFINITY, f64::max);
        let alpha = damping.alpha(n);
        let gamma = damping.gamma(n).unwrap_or(0.0);
        let nu1 = growth_bound_estimate(alpha, gamma, inverse_norm(&op)?)?;
        let nu2 = growth_bound_from_operator_norms(&a, &damping, alpha, gamma)?;
        let cert = gpg_numeric_growth_bound(&op, &damping, &a_grid, &opts)?;
        for est in [Some(nu1), Some(nu2), cert.certified].into_iter().flatten() {
            if est < exact - 1e-12 {
                violations += 1;
            }
        }
    }
    Ok(Check {
        name: "c06_growth_bound_certificates",
        measured: violations as f64,
        bound: 0.0,
        pass: violations == 0,
        detail: "20 random dissipative diagonal instances".into(),
    })
}

fn c07(exp: &Experiment) -> Result<Check, CliError> {
    let most_negative_certified = |op: &BlockOperator, kernel: &DelayKernel, grid: &BGrid, lines: &[f64]| {
        let omega = op.spectral_abscissa();
        let mut best: Option<f64> = None;
        for &a in lines {
            if a < 0.0 && a > omega && stability_criterion(a, kernel, op, grid)?.holds {
                best = Some(best.map_or(a, |b| b.min(a)));
            }
        }
        Ok::<_, CliError>(best)
    };
    let h = exp.green_step();
    let configured = if exp.kernel.is_zero() {
        None
    } else {
        most_negative_certified(&exp.op, &exp.kernel, &bgrid(exp), &exp.config.analysis.a_grid)?
    };
    let (op, kernel, line, horizon, source) = match configured {
        Some(a) => (exp.op.clone(), exp.kernel.clone(), a, exp.config.analysis.green_horizon, "config"),
        None => {
            let a = SpectralOperator::dirichlet_laplacian(16);
            let op = build_reduction(&a, &DampingSpec::Scalar(-2.0))?;
            let kernel = DelayKernel::wave_point_delay(&a, 0.04, 0.0)?;
            let grid = BGrid {
                points: 600,
                ..BGrid::default()
            };
            let line = most_negative_certified(&op, &kernel, &grid, &[-0.6])?
                .ok_or_else(|| CliError::Usage("verify: reference delay instance is not certified".into()))?;
            (op, kernel, line, 20.0, "reference")
        }
    };
    let fit = delay_semigroup_decay(&green_operator(&op, &kernel, horizon, h)?);
    let bound = line.abs() - 0.05;
    Ok(Check {
        name: "c07_delay_criterion_vs_green_decay",
        measured: fit.gamma,
        bound,
        pass: fit.gamma >= bound,
        detail: format!("{source}: certified line a = {line}, fitted Green decay rate {:.4}", fit.gamma),
    })
}

fn c08() -> Result<Check, CliError> {
    let a = SpectralOperator::dirichlet_laplacian(2);
    let op = build_reduction(&a, &DampingSpec::Scalar(-2.0))?;
    let kernel = DelayKernel::wave_point_delay(&a, 0.1, 0.05)?;
    let dim = op.dim();
    let l = DMatrix::from_fn(dim, 2, |i, j| if i >= 2 { 0.3 / (1.0 + (i - 2 + j) as f64) } else { 0.0 });
    let noise = NoiseSpec::wiener(vec![1.0, 1.0])?;
    let phi0 = DVector::from_fn(dim, |i, _| if i < 2 { 1.0 / (i + 1) as f64 } else { 0.0 });
    let init = InitialData::constant(phi0, 1.0)?;
    let h_ref = 1.0 / 1024.0;
    let green = green_operator(&op, &kernel, 1.0, h_ref)?;
    let coarse = |h: f64| {
        Simulator::new(&op, &kernel, DiffusionSpec::Additive(l.clone()), noise.clone(), SimOptions::new(1.0, h))
    };
    let (s64, s128) = (coarse(1.0 / 64.0)?, coarse(1.0 / 128.0)?);
    let (mut e64, mut e128) = (0.0, 0.0);
    let paths = 40;
    for p in 0..paths {
        let inc = brownian_increments(&noise, h_ref, 1024, 8, p);
        let reference = variation_of_constants_check(&op, &kernel, &l, &green, &init, &inc)?.reconstruction;
        let err = |sim: &Simulator, factor: usize| -> Result<f64, CliError> {
            let y = sim.run_with_increments(&init, &coarsen_increments(&inc, factor))?;
            Ok(y.iter()
                .enumerate()
                .map(|(j, v)| (v - &reference[j * factor]).norm())
                .fold(0.0, f64::max))
        };
        e64 += err(&s64, 16)?;
        e128 += err(&s128, 8)?;
    }
    let ratio = e64 / e128;
    Ok(Check {
        name: "c08_scheme_order",
        measured: ratio,
        bound: 2.0,
        pass: (1.7..=2.3).contains(&ratio),
        detail: format!("{paths} paths, mean sup error ratio h=1/64 vs h=1/128, accepted range [1.7, 2.3]"),
    })
}

struct WaveSetup {
    sim: Simulator,
    init_a: InitialData,
    init_b: InitialData,
    delay: f64,
    paths: u64,
    seed: u64,
    source: &'static str,
}

fn wave_setup(exp: &Experiment, horizon: f64) -> Result<WaveSetup, CliError> {
    let paths = exp.paths().min(200);
    let is_wave = exp.wave_parameters().is_some() && matches!(exp.config.diffusion, DiffusionConfig::Wave { .. });
    if is_wave {
        let s = &exp.config.simulation;
        let alt = s.initial_alt.clone().unwrap_or_else(|| vec![-0.5, 0.8]);
        return Ok(WaveSetup {
            sim: simulator(exp, exp.grid_horizon(horizon))?,
            init_a: exp.initial(&s.initial)?,
            init_b: exp.initial(&alt)?,
            delay: exp.delay(),
            paths,
            seed: exp.seed(),
            source: "config",
        });
    }
    let s = WaveScenario {
        n_modes: 8,
        ..WaveScenario::default()
    };
    Ok(WaveSetup {
        sim: Simulator::new(
            &s.reduction()?,
            &s.kernel()?,
            s.diffusion()?,
            s.noise(),
            SimOptions::new(horizon, 1.0 / 128.0),
        )?,
        init_a: s.initial_data(&[1.0, 0.0, 0.3])?,
        init_b: s.initial_data(&[-0.5, 0.8])?,
        delay: WaveScenario::DELAY,
        paths,
        seed: exp.seed(),
        source: "reference",
    })
}

fn c09(exp: &Experiment) -> Result<Check, CliError> {
    let w = wave_setup(exp, 20.0)?;
    let rec = w.sim.paired_paths(&w.init_a, &w.init_b, w.paths, w.seed, 16)?;
    let proxy = segment_second_moment(&rec.times, &rec.mean_sq_norm, w.delay, &w.init_a);
    let (_, _, gap) = stabilization(&running_sup(&proxy));
    let rate = rec.rate.unwrap_or(f64::NAN);
    Ok(Check {
        name: "c09_contraction",
        measured: gap,
        bound: 0.10,
        pass: rate > 0.0 && gap <= 0.10,
        detail: format!("{}: {} paths, T = 20, fitted contraction rate {rate:.4}", w.source, w.paths),
    })
}

fn c10(exp: &Experiment) -> Result<Check, CliError> {
    let w = wave_setup(exp, 25.0)?;
    let block = w.paths.min(100);
    let mut decreasing = true;
    let mut tables = Vec::new();
    for k in 0..2 {
        let t = cauchy_diagnostic(&w.sim, &w.init_a, &[5.0, 10.0, 20.0], 5.0, block, 128, w.seed + k, None)?;
        decreasing &= t.strictly_decreasing();
        tables.push(t.rows.iter().map(|r| format!("{:.2e}", r.d_hat)).collect::<Vec<_>>().join(" > "));
    }
    let d = uniqueness_diagnostic(&w.sim, &w.init_a, &w.init_b, 20.0, block, 128, w.seed + 2)?;
    Ok(Check {
        name: "c10_stationarity_diagnostic",
        measured: d,
        bound: 0.05,
        pass: decreasing && d < 0.05,
        detail: format!(
            "{}: block {block}, d_hat seed A {}, seed B {}, strictly decreasing {decreasing}",
            w.source, tables[0], tables[1]
        ),
    })
}

fn c11() -> Result<Check, CliError> {
    const DELAY_BOUND: f64 = 0.080_262_259_162_355_988_68;
    const GAMMA: f64 = 0.696_420_058_376_978_392_56;
    const BETA_MAX: f64 = 0.115_312_725_013_652_102_84;
    let t = example_thresholds(1.0, 0.04, 0.0)?;
    let err = (t.delay_bound - DELAY_BOUND)
        .abs()
        .max((t.gamma.unwrap_or(f64::NAN) - GAMMA).abs())
        .max((t.beta_max.unwrap_or(f64::NAN) - BETA_MAX).abs());
    Ok(Check {
        name: "c11_threshold_arithmetic",
        measured: err,
        bound: 1e-12,
        pass: err <= 1e-12,
        detail: "alpha = 1, c1 = 0.04, c2 = 0 against 50-digit values".into(),
    })
}

fn c12() -> Result<Check, CliError> {
    let decay = DecayConstants::new(1.0, 0.6965, DecaySource::ExampleLiteral);
    let (r, kappa) = (1.0, 1.0);
    let a = 0.01;
    let lipschitz = 3.0 * (a + a * (2.0 * 0.6965f64).exp());
    let mut ok = Vec::new();

    let w = sufficient_condition_wiener(&decay, a, a, r, kappa)?;
    let l0 = sufficient_condition_levy(&decay, a, a, r, kappa, 1.0, 0.0)?;
    ok.push((l0.rhs - w.rhs).abs() < 1e-15 && (l0.rhs - lipschitz).abs() < 1e-12 && l0.holds);

    for (size, moment, holds) in [(0.5, 0.5, true), (5.0, 50.0, false)] {
        let noise = NoiseSpec::pure_jump(1, JumpSpec::new(2.0, NormLaw::Constant(size)))?;
        let m2 = noise.jump_second_moment();
        let v = sufficient_condition_levy(&decay, a, a, r, kappa, noise.trace_q(), m2)?;
        ok.push((m2 - moment).abs() < 1e-12 && (v.rhs - moment * lipschitz).abs() < 1e-10 && v.holds == holds);
    }

    let additive = DiffusionSpec::Additive(DMatrix::identity(2, 1));
    let tail = |law: NormLaw| -> Result<_, CliError> {
        let noise = NoiseSpec::pure_jump(1, JumpSpec::new(1.0, law))?;
        Ok(levy_additive_condition(&noise, &additive, &decay)?)
    };
    let bounded = tail(NormLaw::Uniform { lo: 0.0, hi: 1.0 })?;
    ok.push(bounded.lhs == 0.0 && bounded.holds);
    let p15 = tail(NormLaw::Pareto {
        scale: 1.0,
        tail_index: 1.5,
    })?;
    ok.push((p15.lhs - 3.0).abs() < 1e-12 && p15.holds && p15.theorem == Theorem::LevyAdditive);
    for idx in [1.0, 0.9] {
        let p = tail(NormLaw::Pareto {
            scale: 1.0,
            tail_index: idx,
        })?;
        ok.push(p.lhs.is_infinite() && !p.holds);
    }
    let wrong = ok.iter().filter(|x| !**x).count();
    Ok(Check {
        name: "c12_levy_verdicts",
        measured: wrong as f64,
        bound: 0.0,
        pass: wrong == 0,
        detail: format!("{} hand-computed verdicts", ok.len()),
    })
}

pub fn run(exp: &Experiment, out: &mut Output) -> Result<Vec<Check>, CliError> {
    let checks = vec![
        c01(),
        c02(exp, out)?,
        c03(exp)?,
        c04(exp)?,
        c05(exp)?,
        c06()?,
        c07(exp)?,
        c08()?,
        c09(exp)?,
        c10(exp)?,
        c11()?,
        c12()?,
    ];
    out.csv(
        "verify.csv",
        "name,measured,bound,pass",
        checks
            .iter()
            .map(|c| format!("{},{},{},{}", c.name, num(c.measured), num(c.bound), c.pass)),
    )?;
    for c in &checks {
        out.note(format!(
            "{} {}: measured {:.6e}, bound {:.6e} ({})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.bound,
            c.detail
        ));
    }
    Ok(checks)
}
