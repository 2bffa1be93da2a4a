use memwave::delay::{delay_semigroup_decay, green_operator, series_criterion, stability_criterion, BGrid, GreenOperator};
use memwave::operator::DampingSpec;
use memwave::sim::{
    brownian_increments, coarsen_increments, running_sup, tail_decay_rate, ContractionRecord, DiffusionSpec,
    SimOptions, Simulator,
};
use memwave::spectral::{bound_reports, semigroup_norms, BoundMethod, BoundReport, GpgOptions};
use memwave::stationarity::{
    cauchy_diagnostic, example_thresholds, segment_second_moment, stationarity_verdict, uniqueness_diagnostic,
    CauchyTable, DecayConstants, DecaySource, ExampleThresholds, StationarityVerdict,
};

use crate::config::{DecaySourceConfig, DiffusionConfig, Experiment};
use crate::error::CliError;
use crate::output::{num, Output};

pub fn gpg_options(exp: &Experiment) -> GpgOptions {
    GpgOptions {
        b_points: exp.config.analysis.b_points,
        b_cutoff: exp.config.analysis.b_cutoff,
        ..GpgOptions::default()
    }
}

pub fn bgrid(exp: &Experiment) -> BGrid {
    BGrid {
        cutoff: exp.config.analysis.b_cutoff,
        points: exp.config.analysis.b_points,
        ..BGrid::default()
    }
}

pub fn thresholds(exp: &Experiment) -> Result<Option<ExampleThresholds>, CliError> {
    match exp.wave_parameters() {
        Some((alpha, c1, c2)) => Ok(Some(example_thresholds(alpha, c1, c2)?)),
        None => Ok(None),
    }
}

fn write_thresholds(out: &mut Output, t: &ExampleThresholds) -> Result<(), CliError> {
    out.csv("thresholds.csv", ExampleThresholds::CSV_HEADER, [t.csv_row()])?;
    out.note(format!(
        "example thresholds: |c1|+|c2| = {} vs delay bound {}, gamma = {}, beta_max = {}",
        t.c_sum,
        t.delay_bound,
        t.gamma.map_or("-".into(), |g| g.to_string()),
        t.beta_max.map_or("-".into(), |b| b.to_string())
    ));
    if let Some(r) = &t.reason {
        out.note(format!("example thresholds: {r}"));
    }
    Ok(())
}

fn green(exp: &Experiment) -> Result<GreenOperator, CliError> {
    let an = &exp.config.analysis;
    Ok(green_operator(&exp.op, &exp.kernel, an.green_horizon, exp.green_step())?)
}

fn lyapunov_report(exp: &Experiment) -> Result<Option<BoundReport>, CliError> {
    if !exp.kernel.is_zero() {
        return Ok(None);
    }
    let reports = bound_reports(&exp.a, &exp.damping, &[0.0], &GpgOptions { b_points: 10, ..GpgOptions::default() })?;
    Ok(reports.into_iter().find(|r| r.method == BoundMethod::Lyapunov))
}

/// Decay constants of the delayed semigroup for the verdict.
pub fn decay_constants(exp: &Experiment, out: &mut Output) -> Result<DecayConstants, CliError> {
    let from_green = |out: &mut Output| -> Result<DecayConstants, CliError> {
        let fit = delay_semigroup_decay(&green(exp)?);
        out.note(format!(
            "green fit on [{}, {}]: gamma = {}, M = {}",
            fit.window.0, fit.window.1, fit.gamma, fit.m
        ));
        Ok(DecayConstants::from_green_fit(&fit)?)
    };
    let example = || -> Result<Option<DecayConstants>, CliError> {
        Ok(thresholds(exp)?
            .and_then(|t| t.gamma)
            .map(|g| DecayConstants::new(1.0, g, DecaySource::ExampleLiteral)))
    };
    let lyapunov = || -> Result<Option<DecayConstants>, CliError> {
        Ok(match lyapunov_report(exp)? {
            Some(r) => Some(DecayConstants::from_lyapunov(r.gamma_minus.unwrap(), r.gamma_plus.unwrap())?),
            None => None,
        })
    };
    let missing = |what: &str| CliError::Validation {
        path: "analysis.decay_source".into(),
        message: format!("{what} decay constants are not available for this configuration"),
    };
    match &exp.config.analysis.decay_source {
        DecaySourceConfig::Auto => {
            if let Some(d) = example()? {
                return Ok(d);
            }
            if let Some(d) = lyapunov()? {
                return Ok(d);
            }
            from_green(out)
        }
        DecaySourceConfig::Example => example()?.ok_or_else(|| missing("example")),
        DecaySourceConfig::Lyapunov => lyapunov()?.ok_or_else(|| missing("lyapunov")),
        DecaySourceConfig::GreenFit => from_green(out),
        DecaySourceConfig::User { m, gamma } => {
            let d = DecayConstants::new(*m, *gamma, DecaySource::User);
            if !(d.m >= 1.0 && d.m.is_finite() && d.gamma > 0.0 && d.gamma.is_finite()) {
                return Err(CliError::Validation {
                    path: "analysis.decay_source.user".into(),
                    message: "need M >= 1 and gamma > 0".into(),
                });
            }
            Ok(d)
        }
    }
}

pub fn analyze(exp: &Experiment, out: &mut Output) -> Result<(), CliError> {
    let n = exp.n_modes();
    let reports = bound_reports(&exp.a, &exp.damping, &exp.config.analysis.a_grid, &gpg_options(exp))?;
    out.csv("bounds.csv", BoundReport::CSV_HEADER, reports.iter().map(BoundReport::csv_row))?;
    for r in &reports {
        out.note(r.to_string());
    }
    if !reports.iter().any(|r| r.omega_g_upper.is_some_and(|w| w < 0.0)) {
        out.warn("no negative growth bound could be certified for the undelayed generator");
    }

    let alpha_b = exp.damping.alpha(n);
    if let (true, Some(gamma)) = (alpha_b > 0.0, exp.damping.gamma(n)) {
        let inv = memwave::operator::inverse_norm(&exp.op)?;
        let rb = memwave::spectral::resolvent_bound_imag_axis(alpha_b, gamma, inv, exp.config.analysis.c)?;
        out.csv(
            "resolvent.csv",
            "alpha,gamma,inv_norm,c,threshold,near,far,uniform",
            [format!(
                "{},{},{},{},{},{},{},{}",
                num(rb.alpha),
                num(rb.gamma),
                num(rb.inv_norm),
                rb.c,
                num(rb.threshold()),
                num(rb.near()),
                num(rb.far()),
                num(rb.uniform())
            )],
        )?;
        out.note(format!("imaginary-axis resolvent bound: sup_b |R(ib)| <= {}", rb.uniform()));
    }

    let envelope = reports
        .iter()
        .find(|r| r.method == BoundMethod::Lyapunov)
        .and_then(|r| Some((r.decay_m?, r.decay_mu?)));
    let times: Vec<f64> = (0..=40).map(|k| 0.25 * k as f64).collect();
    let norms = semigroup_norms(&exp.op, &times)?;
    out.csv(
        "semigroup.csv",
        "t,norm,envelope",
        times.iter().zip(&norms).map(|(t, v)| {
            let env = envelope.map_or(String::new(), |(m, mu)| num(m * (-mu * t).exp()));
            format!("{t},{},{env}", num(*v))
        }),
    )?;
    if let Some((m, mu)) = envelope {
        let worst = times
            .iter()
            .zip(&norms)
            .map(|(t, v)| v / (m * (-mu * t).exp()))
            .fold(0.0, f64::max);
        out.note(format!("semigroup norm / envelope: max ratio {worst:.6} (<= 1 expected)"));
    }

    if let Some(t) = thresholds(exp)? {
        write_thresholds(out, &t)?;
    }

    if exp.kernel.is_zero() {
        out.note("no delay: delay criteria skipped");
        return Ok(());
    }
    let omega = exp.op.spectral_abscissa();
    let mut rows = Vec::new();
    for &a in &exp.config.analysis.a_grid {
        if !(a <= 0.0 && a > omega) {
            continue;
        }
        let v = stability_criterion(a, &exp.kernel, &exp.op, &bgrid(exp))?;
        let s = series_criterion(a, &exp.kernel, &exp.op, &bgrid(exp), 8)?;
        rows.push(format!(
            "{a},{},{},{},{},{}",
            num(v.lhs),
            num(v.rhs),
            v.holds,
            num(s.q_a),
            s.certified
        ));
        if v.holds {
            out.note(format!("delay criterion holds on a = {a}: {} < {}", v.lhs, v.rhs));
        }
    }
    out.csv("delay_criteria.csv", "a,lhs,rhs,holds,q_a,series_certified", rows)?;

    let g = green(exp)?;
    out.csv("green.csv", GreenOperator::CSV_HEADER, g.csv_rows())?;
    let fit = delay_semigroup_decay(&g);
    out.note(format!(
        "delayed semigroup fit on [{}, {}]: |G(t)| ~ {} e^(-{} t){}",
        fit.window.0,
        fit.window.1,
        fit.m,
        fit.gamma,
        if fit.decaying { "" } else { " (not decaying)" }
    ));
    Ok(())
}

pub fn simulator(exp: &Experiment, horizon: f64) -> Result<Simulator, CliError> {
    Ok(Simulator::new(
        &exp.op,
        &exp.kernel,
        exp.diffusion.clone(),
        exp.noise.clone(),
        exp.sim_options(horizon),
    )?)
}

fn write_contraction(out: &mut Output, c: &ContractionRecord) -> Result<(), CliError> {
    out.csv("contraction.csv", ContractionRecord::CSV_HEADER, c.csv_rows())?;
    out.note(format!(
        "paired paths: E|dy|^2 at T = {:.6e}, fitted rate {}",
        c.mean_sq_diff.last().copied().unwrap_or(f64::NAN),
        c.rate.map_or("-".into(), |r| r.to_string())
    ));
    Ok(())
}

fn write_moments(exp: &Experiment, out: &mut Output, sim: &Simulator, every: usize) -> Result<(), CliError> {
    let s = &exp.config.simulation;
    let init = exp.initial(&s.initial)?;
    let rec = sim.moments(&init, exp.paths(), exp.seed(), every)?;
    out.csv("moments.csv", &rec.csv_header(), rec.csv_rows())?;
    let proxy = segment_second_moment(&rec.times, &rec.mean_sq_norm, exp.delay(), &init);
    let sup = running_sup(&proxy);
    out.csv(
        "segment_moments.csv",
        "t,segment_second_moment,running_sup",
        rec.times
            .iter()
            .zip(&proxy)
            .zip(&sup)
            .map(|((t, p), m)| format!("{t},{},{}", num(*p), num(*m))),
    )?;
    out.note(format!(
        "moments over {} paths: sup_t E|Y(t)|^2 = {:.6e}, final E|y|^2 = {:.6e}, jumps = {}",
        rec.paths,
        sup.last().copied().unwrap_or(f64::NAN),
        rec.mean_sq_norm.last().copied().unwrap_or(f64::NAN),
        rec.jumps
    ));
    Ok(())
}

pub fn simulate(exp: &Experiment, out: &mut Output) -> Result<(), CliError> {
    let s = &exp.config.simulation;
    let sim = simulator(exp, s.horizon)?;
    let every = s.record_every;
    write_moments(exp, out, &sim, every)?;

    let init = exp.initial(&s.initial)?;
    let traj = sim.simulate_path(&init, exp.seed(), 0, every)?;
    let dim = sim.dim();
    let header = std::iter::once("t,norm".to_string())
        .chain((1..=dim).map(|i| format!("y_{i}")))
        .collect::<Vec<_>>()
        .join(",");
    out.csv(
        "trajectory.csv",
        &header,
        traj.times.iter().zip(&traj.states).map(|(t, y)| {
            let coords: Vec<String> = y.iter().map(|v| num(*v)).collect();
            format!("{t},{},{}", num(y.norm()), coords.join(","))
        }),
    )?;

    if let Some(alt) = &s.initial_alt {
        let c = sim.paired_paths(&init, &exp.initial(alt)?, exp.paths(), exp.seed(), every)?;
        write_contraction(out, &c)?;
    }

    let zero_noise = matches!(&exp.diffusion, DiffusionSpec::Additive(l) if l.iter().all(|v| *v == 0.0));
    if zero_noise {
        if let Some(r) = lyapunov_report(exp)? {
            let (m, mu) = (r.decay_m.unwrap(), r.decay_mu.unwrap());
            let y0 = traj.states[0].norm();
            let worst = traj
                .times
                .iter()
                .zip(&traj.states)
                .map(|(t, y)| if y0 > 0.0 { y.norm() / (m * (-mu * t).exp() * y0) } else { 0.0 })
                .fold(0.0, f64::max);
            out.note(format!(
                "zero-noise path vs envelope M e^(-mu t)|y0| (M = {m:.6}, mu = {mu:.6}): max ratio {worst:.6}"
            ));
            if worst > 1.0 + 1e-9 {
                out.warn("zero-noise path exceeds the deterministic decay envelope");
            }
        }
    }

    if s.richardson {
        richardson(exp, out)?;
    }
    Ok(())
}

/// Strong-error ratio `e(h)/e(h/2)` against an `h/8` reference on shared
/// Brownian paths (Gaussian noise only).
fn richardson(exp: &Experiment, out: &mut Output) -> Result<(), CliError> {
    if exp.noise.jump().is_some() {
        out.warn("richardson check skipped: jump noise");
        return Ok(());
    }
    let s = &exp.config.simulation;
    let h = exp.step;
    let run = |step: f64| -> Result<Simulator, CliError> {
        Ok(Simulator::new(
            &exp.op,
            &exp.kernel,
            exp.diffusion.clone(),
            exp.noise.clone(),
            SimOptions::new(s.horizon, step).scheme(exp.scheme()),
        )?)
    };
    let (fine, half, coarse) = (run(h / 8.0)?, run(h / 2.0)?, run(h)?);
    let init = exp.initial(&s.initial)?;
    let paths = exp.paths().min(32);
    let (mut e1, mut e2) = (0.0, 0.0);
    for p in 0..paths {
        let inc = brownian_increments(&exp.noise, h / 8.0, fine.steps(), exp.seed(), p);
        let yf = fine.run_with_increments(&init, &inc)?;
        let yh = half.run_with_increments(&init, &coarsen_increments(&inc, 4))?;
        let yc = coarse.run_with_increments(&init, &coarsen_increments(&inc, 8))?;
        e1 += yc.iter().enumerate().map(|(k, y)| (y - &yf[8 * k]).norm()).fold(0.0, f64::max);
        e2 += yh.iter().enumerate().map(|(k, y)| (y - &yf[4 * k]).norm()).fold(0.0, f64::max);
    }
    let (e1, e2) = (e1 / paths as f64, e2 / paths as f64);
    let ratio = e1 / e2;
    out.csv(
        "richardson.csv",
        "h,error",
        [format!("{h},{}", num(e1)), format!("{},{}", h / 2.0, num(e2))],
    )?;
    out.note(format!("richardson: e(h) = {e1:.3e}, e(h/2) = {e2:.3e}, ratio {ratio:.3}"));
    Ok(())
}

pub fn stationary(exp: &Experiment, out: &mut Output) -> Result<StationarityVerdict, CliError> {
    let decay = decay_constants(exp, out)?;
    let verdict = stationarity_verdict(&exp.noise, &exp.diffusion, &decay, exp.delay())?;
    out.csv("verdict.csv", StationarityVerdict::CSV_HEADER, [verdict.csv_row()])?;
    out.note(format!(
        "sufficient condition ({}): lhs = {}, rhs = {}, holds = {} [M = {}, gamma = {}, source = {}]",
        verdict.theorem.as_str(),
        verdict.lhs,
        verdict.rhs,
        verdict.holds,
        decay.m,
        decay.gamma,
        decay.source.as_str()
    ));
    if let Some(t) = thresholds(exp)? {
        write_thresholds(out, &t)?;
        if let (DiffusionConfig::Wave { beta }, Some(beta_max)) = (&exp.config.diffusion, t.beta_max) {
            if beta.abs() >= beta_max {
                out.warn(format!("beta = {beta} is not below the example threshold beta_max = {beta_max}"));
            }
        }
    }

    let an = &exp.config.analysis;
    let s = &exp.config.simulation;
    let last = an.checkpoints.last().copied().unwrap_or(0.0);
    let horizon = exp.grid_horizon((last + an.offset).max(s.horizon));
    let sim = simulator(exp, horizon)?;
    let init = exp.initial(&s.initial)?;
    let block = an.block_paths.unwrap_or(exp.paths());
    if !an.checkpoints.is_empty() {
        let table = cauchy_diagnostic(
            &sim,
            &init,
            &an.checkpoints,
            an.offset,
            block,
            an.dictionary_size,
            exp.seed(),
            Some(&verdict),
        )?;
        out.csv("cauchy.csv", CauchyTable::CSV_HEADER, table.csv_rows())?;
        for r in &table.rows {
            out.note(format!("d_hat(t = {}, t + {}) = {:.6e}", r.t, r.s, r.d_hat));
        }
        if let Some(w) = &table.warning {
            out.warn(w.clone());
        }
    }
    if let Some(alt) = &s.initial_alt {
        let alt = exp.initial(alt)?;
        let t = if last > 0.0 { last } else { horizon };
        let d = uniqueness_diagnostic(&sim, &init, &alt, t, block, an.dictionary_size, exp.seed())?;
        out.csv("uniqueness.csv", "t,d_hat", [format!("{t},{}", num(d))])?;
        out.note(format!("uniqueness: d_hat between the two initial data = {d:.6e}"));
        let c = sim.paired_paths(&init, &alt, exp.paths(), exp.seed(), s.record_every)?;
        write_contraction(out, &c)?;
        if let Some(rate) = tail_decay_rate(&c.times, &c.mean_sq_diff) {
            if rate <= 0.0 {
                out.warn(format!("paired paths do not contract (rate {rate})"));
            }
        }
    }
    write_moments(exp, out, &sim, s.record_every)?;
    Ok(verdict)
}

/// Dissipative scalar damping `value < 0` gives `α_B = −value`.
pub fn scalar_alpha(d: &DampingSpec) -> Option<f64> {
    match d {
        DampingSpec::Scalar(v) if *v < 0.0 => Some(-v),
        _ => None,
    }
}
