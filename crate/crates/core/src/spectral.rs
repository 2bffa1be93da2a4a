//! Spectral bounds, the Lyapunov operator, resolvent estimates and growth
//! bound certificates for the truncated generator.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector3};

use crate::linalg;
use crate::operator::{inverse_norm, BlockOperator, BlockRepr, DampingSpec, SpectralOperator};
use crate::{Error, Result, C64};

/// Spectral bound of `Λ` for `B = βI`:
/// `β/2 + √(β²/4 + ω_s(−A))` when the radicand is nonnegative, else `β/2`.
pub fn spectral_bound_scalar_damping(beta: f64, omega_s_neg_a: f64) -> f64 {
    let disc = beta * beta / 4.0 + omega_s_neg_a;
    if disc >= 0.0 {
        beta / 2.0 + disc.sqrt()
    } else {
        beta / 2.0
    }
}

/// Solution `P` of `Λ*P + PΛ = −I` for `B = −αI`, stored per mode in
/// energy coordinates.
///
/// In `(u, u')` coordinates the solution is
/// `P = [[(1/α)A + (α/2)I, ½I], [½I, (1/α)I]]` (with the `(1,1)` entry acting
/// from `V`), and conjugating by `Σ = diag(A^{1/2}, I)` gives the per-mode
/// block `[[1/α + α/(2λ), 1/(2√λ)], [1/(2√λ), 1/α]]`. Quadratic form values
/// `⟨Py, y⟩` are the same in both coordinate systems.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovOperator {
    alpha: f64,
    blocks: Vec<Matrix2<f64>>,
    uniqueness_gap: f64,
}

impl LyapunovOperator {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn blocks(&self) -> &[Matrix2<f64>] {
        &self.blocks
    }

    pub fn n_modes(&self) -> usize {
        self.blocks.len()
    }

    /// Largest difference between the closed form and an independent linear
    /// solve of the per-mode Lyapunov system.
    pub fn uniqueness_gap(&self) -> f64 {
        self.uniqueness_gap
    }

    pub fn apply(&self, y: &DVector<C64>) -> Result<DVector<C64>> {
        let n = self.blocks.len();
        if y.len() != 2 * n {
            return Err(Error::DimensionMismatch {
                context: "state vector",
                expected: 2 * n,
                found: y.len(),
            });
        }
        let mut out = DVector::zeros(2 * n);
        for (i, b) in self.blocks.iter().enumerate() {
            let (p, q) = (y[i], y[n + i]);
            out[i] = p * b[(0, 0)] + q * b[(0, 1)];
            out[n + i] = p * b[(1, 0)] + q * b[(1, 1)];
        }
        Ok(out)
    }

    /// `⟨Py, y⟩/‖y‖²`.
    pub fn rayleigh_quotient(&self, y: &DVector<C64>) -> Result<f64> {
        let norm2 = y.norm_squared();
        if !(norm2.sqrt() > 1e-100) {
            return Err(Error::ZeroVector(norm2.sqrt()));
        }
        Ok(self.apply(y)?.dotc(y).re / norm2)
    }

    /// `(min, max)` eigenvalue of `P`.
    pub fn eigen_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for b in &self.blocks {
            let mean = 0.5 * (b[(0, 0)] + b[(1, 1)]);
            let half = 0.5 * (b[(0, 0)] - b[(1, 1)]);
            let r = (half * half + b[(0, 1)] * b[(1, 0)]).sqrt();
            lo = lo.min(mean - r);
            hi = hi.max(mean + r);
        }
        (lo, hi)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| (b - b.transpose()).norm() == 0.0 && b[(0, 0)] > 0.0 && b.determinant() > 0.0)
    }

    /// Copy with `delta` added to one diagonal entry of one mode block
    /// (`entry` 0 or 1). Used for fault injection.
    pub fn perturbed(&self, mode: usize, entry: usize, delta: f64) -> Result<Self> {
        if mode >= self.blocks.len() || entry > 1 {
            return Err(Error::invalid("perturbation", "mode or entry out of range"));
        }
        let mut out = self.clone();
        out.blocks[mode][(entry, entry)] += delta;
        Ok(out)
    }
}

fn solve_mode_lyapunov(sqrt_lambda: f64, alpha: f64) -> Option<Matrix2<f64>> {
    // Unknowns (p, q, r) of P = [[p, q], [q, r]] for Λ = [[0, s], [−s, −α]]:
    //   (1,1): −2s q          = −1
    //   (1,2):  s p − α q − s r =  0
    //   (2,2):  2s q − 2α r   = −1
    let s = sqrt_lambda;
    let m = Matrix3::new(0.0, -2.0 * s, 0.0, s, -alpha, -s, 0.0, 2.0 * s, -2.0 * alpha);
    let rhs = Vector3::new(-1.0, 0.0, -1.0);
    let x = m.lu().solve(&rhs)?;
    Some(Matrix2::new(x[0], x[1], x[1], x[2]))
}

pub fn lyapunov_solution(alpha: f64, a: &SpectralOperator) -> Result<LyapunovOperator> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid("alpha", format!("must be positive, got {alpha}")));
    }
    let mut blocks = Vec::with_capacity(a.n_modes());
    let mut gap: f64 = 0.0;
    for &lambda in a.eigenvalues() {
        let s = lambda.sqrt();
        let p = Matrix2::new(
            1.0 / alpha + alpha / (2.0 * lambda),
            0.5 / s,
            0.5 / s,
            1.0 / alpha,
        );
        let solved = solve_mode_lyapunov(s, alpha)
            .ok_or(Error::Singular { what: "per-mode Lyapunov system" })?;
        gap = gap.max((p - solved).abs().max() / p.abs().max());
        blocks.push(p);
    }
    Ok(LyapunovOperator {
        alpha,
        blocks,
        uniqueness_gap: gap,
    })
}

/// `|⟨Λy, Py⟩ + ⟨Py, Λy⟩ + ‖y‖²| / ‖y‖²`.
pub fn lyapunov_residual(p: &LyapunovOperator, op: &BlockOperator, y: &DVector<C64>) -> Result<f64> {
    let norm2 = y.norm_squared();
    if !(norm2.sqrt() > 1e-100) {
        return Err(Error::ZeroVector(norm2.sqrt()));
    }
    let ly = op.apply(y)?;
    let py = p.apply(y)?;
    let form = 2.0 * py.dotc(&ly).re;
    Ok((form + norm2).abs() / norm2)
}

/// `(γ₋, γ₊)` with `θ = 4|ω_s(−A)|/α²`.
pub fn gamma_bounds(alpha: f64, omega_s_neg_a: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha", "must be positive"));
    }
    if !(omega_s_neg_a < 0.0) {
        return Err(Error::invalid(
            "omega_s(-A)",
            format!("must be negative, got {omega_s_neg_a}"),
        ));
    }
    let theta = 4.0 * omega_s_neg_a.abs() / (alpha * alpha);
    let root = (1.0 + theta).sqrt();
    let minus = root / (1.0 + root) / alpha;
    let plus = (1.0 + (1.0 + root) / theta) / alpha;
    Ok((minus, plus))
}

/// `(M, μ) = (√(γ₊/γ₋), 1/(2γ₊))` so that `‖e^{tΛ}‖ ≤ M e^{−μt}`.
pub fn decay_envelope(gamma_minus: f64, gamma_plus: f64) -> Result<(f64, f64)> {
    if !(gamma_minus > 0.0) || !(gamma_minus <= gamma_plus) {
        return Err(Error::invalid(
            "gamma bounds",
            format!("need 0 < gamma_minus <= gamma_plus, got ({gamma_minus}, {gamma_plus})"),
        ));
    }
    Ok(((gamma_plus / gamma_minus).sqrt(), 1.0 / (2.0 * gamma_plus)))
}

/// `‖(λI − Λ)^{−1}‖`.
pub fn resolvent_norm(op: &BlockOperator, lambda: C64) -> Result<f64> {
    match op.repr() {
        BlockRepr::Diagonal(blocks) => {
            let mut best: f64 = 0.0;
            for b in blocks {
                for e in linalg::eig2(b) {
                    let d = (lambda - e).norm();
                    if d <= 1e-12 {
                        return Err(Error::NearSpectrum { re: lambda.re, im: lambda.im, distance: d });
                    }
                }
                let shifted = Matrix2::from_diagonal_element(lambda) - b;
                let inv = linalg::inv2(&shifted).ok_or(Error::NearSpectrum {
                    re: lambda.re,
                    im: lambda.im,
                    distance: 0.0,
                })?;
                best = best.max(linalg::norm2(&inv));
            }
            Ok(best)
        }
        BlockRepr::Dense(m) => {
            let n = m.nrows();
            let shifted = DMatrix::from_diagonal_element(n, n, lambda) - m;
            let sv = shifted.svd(false, false).singular_values;
            let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
            if smin <= 1e-12 {
                return Err(Error::NearSpectrum { re: lambda.re, im: lambda.im, distance: smin });
            }
            Ok(1.0 / smin)
        }
    }
}

/// Two-branch bound on `‖R(ib, Λ)‖` along the imaginary axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventBound {
    pub alpha: f64,
    pub gamma: f64,
    pub inv_norm: f64,
    pub c: f64,
}

impl ResolventBound {
    /// Switch point `c/‖Λ^{−1}‖` between the two branches.
    pub fn threshold(&self) -> f64 {
        self.c / self.inv_norm
    }

    pub fn near(&self) -> f64 {
        self.inv_norm / (1.0 - self.c)
    }

    pub fn far(&self) -> f64 {
        ((3.0 + self.gamma) * self.alpha * self.inv_norm + self.c) / (self.alpha * self.c)
    }

    pub fn at(&self, b: f64) -> f64 {
        if b.abs() <= self.threshold() {
            self.near()
        } else {
            self.far()
        }
    }

    /// Bound valid for all `b`.
    pub fn uniform(&self) -> f64 {
        self.near().max(self.far())
    }
}

pub fn resolvent_bound_imag_axis(
    alpha: f64,
    gamma: f64,
    inv_norm: f64,
    c: f64,
) -> Result<ResolventBound> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::invalid("c", format!("must lie in (0, 1), got {c}")));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha", "must be positive"));
    }
    if !(inv_norm > 0.0) || !(gamma >= 0.0) {
        return Err(Error::invalid("inv_norm/gamma", "need inv_norm > 0 and gamma >= 0"));
    }
    Ok(ResolventBound {
        alpha,
        gamma,
        inv_norm,
        c,
    })
}

/// Uniform imaginary-axis resolvent constant `(2α(3+γ)/κ + 1)/α` for a
/// lower bound `κ ≤ 1/‖Λ^{−1}‖`.
pub fn resolvent_constant_from_lower_bound(alpha: f64, gamma: f64, kappa: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(kappa > 0.0) || !(gamma >= 0.0) {
        return Err(Error::invalid("alpha/gamma/kappa", "need alpha > 0, kappa > 0, gamma >= 0"));
    }
    Ok((2.0 * alpha * (3.0 + gamma) / kappa + 1.0) / alpha)
}

/// Upper estimate `ν` of the growth bound from `α`, the sector constant `γ`
/// and `‖Λ^{−1}‖`.
///
/// For `γ ≠ 0`, `ν ∈ (−α, 0)` solves `ν² + (νγα/(α+ν))² = ‖Λ^{−1}‖^{−2}`; the
/// left side decreases on that interval, so bisection is used. For `γ = 0`
/// the estimate is `max{−α, −1/‖Λ^{−1}‖}`.
pub fn growth_bound_estimate(alpha: f64, gamma: f64, inv_norm: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(inv_norm > 0.0) || !(gamma >= 0.0) {
        return Err(Error::invalid("alpha/gamma/inv_norm", "need alpha > 0, inv_norm > 0, gamma >= 0"));
    }
    if gamma == 0.0 {
        return Ok((-alpha).max(-1.0 / inv_norm));
    }
    let target = inv_norm.powi(-2);
    let f = |nu: f64| {
        let t = nu * gamma * alpha / (alpha + nu);
        nu * nu + t * t - target
    };
    let mut lo = -alpha + 1e-12;
    let mut hi = -1e-12;
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo > 0.0 && fhi < 0.0) {
        return Err(Error::NoSignChange);
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The upper end keeps the estimate on the safe side of the root.
    Ok(hi)
}

/// `‖A^{−1/2}BA^{−1/2}‖ + 2‖A^{−1/2}‖`, an upper bound for `‖Λ^{−1}‖`.
pub fn inverse_norm_surrogate(a: &SpectralOperator, b: &DampingSpec) -> Result<f64> {
    b.check_dim(a.n_modes())?;
    Ok(b.conjugate_norm(a) + 2.0 * a.inv_sqrt_norm())
}

pub fn growth_bound_from_operator_norms(
    a: &SpectralOperator,
    b: &DampingSpec,
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    let s = inverse_norm_surrogate(a, b)?;
    if !s.is_finite() {
        return Err(Error::invalid("conjugate norm", "must be finite"));
    }
    growth_bound_estimate(alpha, gamma, s)
}

/// `|b|` beyond which the line `a + iℝ` keeps distance `δ` from the
/// approximate point spectrum: `α(3δ + (δ−a)γ)/(α − δ + a)`. Needs
/// `0 < δ < α` and `δ − α < a ≤ 0`.
pub fn resolvent_b_cutoff(alpha: f64, gamma: f64, delta: f64, a: f64) -> Option<f64> {
    if !(delta > 0.0 && delta < alpha && a > delta - alpha && a <= 0.0) {
        return None;
    }
    Some(alpha * (3.0 * delta + (delta - a) * gamma) / (alpha - delta + a))
}

/// Settings for [`gpg_numeric_growth_bound`].
#[derive(Debug, Clone, PartialEq)]
pub struct GpgOptions {
    /// Lines whose sampled resolvent supremum exceeds this count as unbounded.
    pub cap: f64,
    /// Number of positive log-spaced `b` values (mirrored to negative `b`).
    pub b_points: usize,
    /// Smallest positive `b` on the grid.
    pub b_min: f64,
    /// Largest `|b|`; `None` uses `10³·(α + √λ_N)`.
    pub b_cutoff: Option<f64>,
    /// Golden-section refinement around the largest grid peaks.
    pub refine_peaks: usize,
}

impl Default for GpgOptions {
    fn default() -> Self {
        Self {
            cap: 1e6,
            b_points: 2000,
            b_min: 1e-3,
            b_cutoff: None,
            refine_peaks: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpgLine {
    pub a: f64,
    /// Sampled `sup_b ‖R(a+ib, Λ)‖`; infinite if a grid point hit the spectrum.
    pub sup_norm: f64,
    pub clean: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpgCertificate {
    /// Smallest certified `a` with `ω_g ≤ a`; `None` means inconclusive.
    pub certified: Option<f64>,
    pub lines: Vec<GpgLine>,
    pub b_cutoff: f64,
    /// Spectral bound of the truncation.
    pub omega_s: f64,
    /// `max{ω_s, −α_B}`.
    pub analytic_bound: f64,
    /// Exact growth bound of the truncation (max eigenvalue real part), for
    /// diagonal instances.
    pub exact_omega_g: Option<f64>,
}

impl GpgCertificate {
    pub fn is_inconclusive(&self) -> bool {
        self.certified.is_none()
    }
}

/// Symmetric grid: `0` and `±b` for `points` log-spaced `b ∈ [b_min, cutoff]`.
pub fn log_b_grid(b_min: f64, cutoff: f64, points: usize) -> Vec<f64> {
    let k = points.max(2);
    let lmin = b_min.ln();
    let lmax = cutoff.max(b_min * 10.0).ln();
    let mut g = Vec::with_capacity(2 * k + 1);
    g.push(0.0);
    for i in 0..k {
        let b = (lmin + (lmax - lmin) * i as f64 / (k - 1) as f64).exp();
        g.push(b);
        g.push(-b);
    }
    g.sort_by(|x, y| x.partial_cmp(y).unwrap());
    g
}

/// Grid maximum of `eval`, refined by golden-section search around the
/// `refine` largest interior local maxima. Non-finite values short-circuit.
pub(crate) fn sup_on_grid(eval: impl Fn(f64) -> f64, grid: &[f64], refine: usize) -> f64 {
    let vals: Vec<f64> = grid.iter().map(|&b| eval(b)).collect();
    let mut sup = vals.iter().cloned().fold(0.0, f64::max);
    if !sup.is_finite() || grid.len() < 3 {
        return sup;
    }
    let mut peaks: Vec<usize> = (1..grid.len() - 1)
        .filter(|&i| vals[i] >= vals[i - 1] && vals[i] >= vals[i + 1])
        .collect();
    peaks.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap());
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    for &i in peaks.iter().take(refine) {
        let (mut lo, mut hi) = (grid[i - 1], grid[i + 1]);
        let mut x1 = hi - INV_PHI * (hi - lo);
        let mut x2 = lo + INV_PHI * (hi - lo);
        let (mut f1, mut f2) = (eval(x1), eval(x2));
        for _ in 0..60 {
            if !f1.is_finite() || !f2.is_finite() {
                return f64::INFINITY;
            }
            if f1 > f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - INV_PHI * (hi - lo);
                f1 = eval(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + INV_PHI * (hi - lo);
                f2 = eval(x2);
            }
            if hi - lo <= 1e-12 * (1.0 + hi.abs()) {
                break;
            }
        }
        sup = sup.max(f1).max(f2);
    }
    sup
}

fn line_sup(op: &BlockOperator, a: f64, grid: &[f64], refine: usize) -> f64 {
    sup_on_grid(
        |b| resolvent_norm(op, C64::new(a, b)).unwrap_or(f64::INFINITY),
        grid,
        refine,
    )
}

/// Default `|b|` extent for sweeps along vertical lines: `10³·(α_B + √λ_N)`,
/// widened to the resolvent cutoff at `δ = α_B/2` when that is larger.
pub fn default_b_cutoff(op: &BlockOperator, b: &DampingSpec) -> f64 {
    let n = op.n_modes();
    let alpha_b = b.alpha(n);
    let sqrt_top = op.sqrt_lambda().iter().cloned().fold(0.0, f64::max);
    let mut cutoff = 1e3 * (alpha_b + sqrt_top);
    if let Some(g) = b.gamma(n) {
        if let Some(analytic) = resolvent_b_cutoff(alpha_b, g, 0.5 * alpha_b, 0.0) {
            cutoff = cutoff.max(analytic);
        }
    }
    cutoff
}

/// `(λI − Λ)^{−1}` as a dense matrix.
pub fn resolvent_matrix(op: &BlockOperator, lambda: C64) -> Result<DMatrix<C64>> {
    let near = |d: f64| Error::NearSpectrum { re: lambda.re, im: lambda.im, distance: d };
    match op.repr() {
        BlockRepr::Diagonal(blocks) => {
            let n = blocks.len();
            let mut m = DMatrix::zeros(2 * n, 2 * n);
            for (i, b) in blocks.iter().enumerate() {
                let inv = linalg::inv2(&(Matrix2::from_diagonal_element(lambda) - b)).ok_or(near(0.0))?;
                let idx = [i, n + i];
                for r in 0..2 {
                    for s in 0..2 {
                        m[(idx[r], idx[s])] = inv[(r, s)];
                    }
                }
            }
            Ok(m)
        }
        BlockRepr::Dense(a) => {
            let n = a.nrows();
            let shifted = DMatrix::from_diagonal_element(n, n, lambda) - a;
            shifted.try_inverse().ok_or(near(0.0))
        }
    }
}

/// Numerical growth-bound certificate from resolvent norms on vertical lines.
///
/// Lines are scanned from the largest `a` downwards. The `b`-grid always
/// contains the imaginary parts of the eigenvalues. A line is clean when
/// its sampled resolvent supremum is below `cap`; the scan may only step to
/// the next line if the gap is at most `1/sup` of the current one, since the
/// disc of that radius around each sampled point lies in the resolvent set.
/// The scan starts from the right-most line and assumes no spectrum lies to
/// its right, which holds for `a ≥ 0` when `B` is dissipative.
pub fn gpg_numeric_growth_bound(
    op: &BlockOperator,
    b: &DampingSpec,
    a_grid: &[f64],
    options: &GpgOptions,
) -> Result<GpgCertificate> {
    if a_grid.is_empty() || a_grid.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("a_grid", "must be a nonempty list of finite values"));
    }
    let alpha_b = b.alpha(op.n_modes());
    let cutoff = options.b_cutoff.unwrap_or_else(|| default_b_cutoff(op, b));
    let mut grid = log_b_grid(options.b_min, cutoff, options.b_points);
    // Sampling at Im μ for every eigenvalue μ gives sup ≥ 1/dist(a, Re μ),
    // so the reachability test below cannot step across an eigenvalue.
    grid.extend(op.eigenvalues().iter().map(|mu| mu.im));
    grid.sort_by(|x, y| x.partial_cmp(y).unwrap());
    grid.dedup();

    let mut a_sorted = a_grid.to_vec();
    a_sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
    a_sorted.dedup();

    let mut lines = Vec::new();
    let mut certified = None;
    let mut prev: Option<(f64, f64)> = None;
    for &a in &a_sorted {
        let sup = line_sup(op, a, &grid, options.refine_peaks);
        let clean = sup.is_finite() && sup <= options.cap;
        lines.push(GpgLine { a, sup_norm: sup, clean });
        let reachable = match prev {
            None => true,
            Some((pa, psup)) => pa - a <= 1.0 / psup,
        };
        if !(clean && reachable) {
            break;
        }
        certified = Some(a);
        prev = Some((a, sup));
    }

    let omega_s = op.spectral_abscissa();
    Ok(GpgCertificate {
        certified,
        lines,
        b_cutoff: cutoff,
        omega_s,
        analytic_bound: omega_s.max(-alpha_b),
        exact_omega_g: op.is_diagonal().then_some(omega_s),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMethod {
    /// Lyapunov envelope for `B = −αI`.
    Lyapunov,
    /// Growth estimate from the exact `‖Λ^{−1}‖`.
    InverseNorm,
    /// Growth estimate from `‖A^{−1/2}BA^{−1/2}‖ + 2‖A^{−1/2}‖`.
    OperatorNorms,
    GpgNumeric,
}

impl BoundMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundMethod::Lyapunov => "lyapunov",
            BoundMethod::InverseNorm => "inverse_norm",
            BoundMethod::OperatorNorms => "operator_norms",
            BoundMethod::GpgNumeric => "gpg_numeric",
        }
    }
}

/// One row of growth and decay bounds. Only the applicable columns are set;
/// when present, `‖e^{tΛ}‖ ≤ decay_M·e^{−decay_mu·t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub method: BoundMethod,
    pub omega_s: f64,
    pub omega_g_upper: Option<f64>,
    pub gamma_minus: Option<f64>,
    pub gamma_plus: Option<f64>,
    pub decay_m: Option<f64>,
    pub decay_mu: Option<f64>,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str =
        "method,omega_s,omega_g_upper,gamma_minus,gamma_plus,decay_M,decay_mu";

    pub fn csv_row(&self) -> String {
        let f = |x: Option<f64>| x.map(|v| format!("{v:.12e}")).unwrap_or_default();
        format!(
            "{},{:.12e},{},{},{},{},{}",
            self.method.as_str(),
            self.omega_s,
            f(self.omega_g_upper),
            f(self.gamma_minus),
            f(self.gamma_plus),
            f(self.decay_m),
            f(self.decay_mu)
        )
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        write!(
            f,
            "[{}] omega_s = {:.6}, omega_g <= {}, gamma in [{}, {}], |e^(tL)| <= {} e^(-{} t)",
            self.method.as_str(),
            self.omega_s,
            show(self.omega_g_upper),
            show(self.gamma_minus),
            show(self.gamma_plus),
            show(self.decay_m),
            show(self.decay_mu)
        )
    }
}

/// All applicable bound reports for `(A, B)`.
pub fn bound_reports(
    a: &SpectralOperator,
    b: &DampingSpec,
    a_grid: &[f64],
    options: &GpgOptions,
) -> Result<Vec<BoundReport>> {
    let op = crate::operator::build_reduction(a, b)?;
    let n = a.n_modes();
    let omega_s = op.spectral_abscissa();
    let alpha_b = b.alpha(n);
    let gamma_b = b.gamma(n);
    let blank = |method| BoundReport {
        method,
        omega_s,
        omega_g_upper: None,
        gamma_minus: None,
        gamma_plus: None,
        decay_m: None,
        decay_mu: None,
    };
    let mut out = Vec::new();

    if let DampingSpec::Scalar(beta) = b {
        if *beta < 0.0 {
            let (gm, gp) = gamma_bounds(-beta, a.omega_s_neg())?;
            let (m, mu) = decay_envelope(gm, gp)?;
            out.push(BoundReport {
                omega_g_upper: Some(-mu),
                gamma_minus: Some(gm),
                gamma_plus: Some(gp),
                decay_m: Some(m),
                decay_mu: Some(mu),
                ..blank(BoundMethod::Lyapunov)
            });
        }
    }
    if alpha_b > 0.0 {
        if let Some(g) = gamma_b {
            let nu = growth_bound_estimate(alpha_b, g, inverse_norm(&op)?)?;
            out.push(BoundReport {
                omega_g_upper: Some(nu),
                decay_mu: (nu < 0.0).then_some(-nu),
                ..blank(BoundMethod::InverseNorm)
            });
            let nu = growth_bound_from_operator_norms(a, b, alpha_b, g)?;
            out.push(BoundReport {
                omega_g_upper: Some(nu),
                decay_mu: (nu < 0.0).then_some(-nu),
                ..blank(BoundMethod::OperatorNorms)
            });
        }
    }
    let cert = gpg_numeric_growth_bound(&op, b, a_grid, options)?;
    out.push(BoundReport {
        omega_g_upper: cert.certified,
        decay_mu: cert.certified.filter(|&x| x < 0.0).map(|x| -x),
        ..blank(BoundMethod::GpgNumeric)
    });
    Ok(out)
}

/// Operator norm `‖e^{tΛ}‖` on a time grid.
pub fn semigroup_norms(op: &BlockOperator, times: &[f64]) -> Result<Vec<f64>> {
    times.iter().map(|&t| Ok(op.exp(t)?.norm())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::operator::build_reduction;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn quadratic_oracle(beta: f64, lambdas: &[f64]) -> f64 {
        // Roots of μ² − βμ + λ = 0.
        lambdas
            .iter()
            .map(|&l| {
                let d = beta * beta - 4.0 * l;
                if d >= 0.0 {
                    (beta + d.sqrt()) / 2.0
                } else {
                    beta / 2.0
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn scalar_damping_examples() {
        let pi2 = PI * PI;
        assert!((spectral_bound_scalar_damping(-2.0, -pi2) + 1.0).abs() < 1e-15);
        let v = spectral_bound_scalar_damping(-8.0, -pi2);
        assert!((v - (-4.0 + (16.0 - pi2).sqrt())).abs() < 1e-15);
        assert!((v + 1.5240).abs() < 1e-4);
        assert_eq!(spectral_bound_scalar_damping(0.0, -pi2), 0.0);
        let lam: Vec<f64> = (1..=20).map(|n| (n as f64 * PI).powi(2)).collect();
        for beta in [-2.0, -8.0, 0.0] {
            assert!((quadratic_oracle(beta, &lam) - spectral_bound_scalar_damping(beta, -pi2)).abs() < 1e-12);
        }
    }

    #[test]
    fn lyapunov_single_mode_example() {
        let a = SpectralOperator::new(vec![PI * PI], "t").unwrap();
        let p = lyapunov_solution(2.0, &a).unwrap();
        let b = p.blocks()[0];
        assert!((b[(0, 0)] - (0.5 + 1.0 / (PI * PI))).abs() < 1e-15);
        assert!((b[(1, 1)] - 0.5).abs() < 1e-15);
        assert!((b[(0, 1)] - 0.5 / PI).abs() < 1e-15);
        assert!(p.uniqueness_gap() < 1e-12);
        assert!(p.is_positive_definite());
        assert!(lyapunov_solution(0.0, &a).is_err());
        assert!(lyapunov_solution(-1.0, &a).is_err());
    }

    #[test]
    fn residual_detects_perturbation() {
        let a = SpectralOperator::dirichlet_laplacian(4);
        let op = build_reduction(&a, &DampingSpec::Scalar(-2.0)).unwrap();
        let p = lyapunov_solution(2.0, &a).unwrap();
        let y = DVector::from_fn(8, |i, _| c(1.0 + 0.3 * i as f64));
        assert!(lyapunov_residual(&p, &op, &y).unwrap() < 1e-12);
        let bad = p.perturbed(0, 0, 0.1).unwrap();
        assert!(lyapunov_residual(&bad, &op, &y).unwrap() > 0.01);
        let zero = DVector::zeros(8);
        assert!(matches!(lyapunov_residual(&p, &op, &zero), Err(Error::ZeroVector(_))));
    }

    #[test]
    fn gamma_bound_values_and_limits() {
        let (gm, gp) = gamma_bounds(2.0, -PI * PI).unwrap();
        assert!((gm - 0.38364).abs() < 1e-4, "{gm}");
        assert!((gp - 0.71769).abs() < 1e-4, "{gp}");
        // These coincide with the extreme eigenvalues of the first mode block.
        let p = lyapunov_solution(2.0, &SpectralOperator::dirichlet_laplacian(20)).unwrap();
        let (lo, hi) = p.eigen_range();
        assert!(lo >= gm - 1e-12 && hi <= gp + 1e-12);
        let (m, mu) = decay_envelope(gm, gp).unwrap();
        assert!((m - 1.368).abs() < 1e-3 && (mu - 0.6967).abs() < 1e-3);

        let alpha = 1.7;
        let big = -1e8 * alpha * alpha / 4.0;
        let (gm, gp) = gamma_bounds(alpha, big).unwrap();
        assert!((gm - 1.0 / alpha).abs() < 1e-3 && (gp - 1.0 / alpha).abs() < 1e-3);
        assert!(gamma_bounds(2.0, 0.0).is_err());
        assert_eq!(decay_envelope(0.5, 0.5).unwrap(), (1.0, 1.0));
        assert!(decay_envelope(0.6, 0.5).is_err());
    }

    #[test]
    fn gamma_bounds_monotone_in_theta() {
        let alpha = 2.0;
        let mut prev = (0.0, f64::INFINITY);
        for k in 1..200 {
            let theta = 0.05 * k as f64;
            let (gm, gp) = gamma_bounds(alpha, -theta * alpha * alpha / 4.0).unwrap();
            assert!(gm > prev.0 && gp < prev.1);
            prev = (gm, gp);
        }
    }

    #[test]
    fn envelope_dominates_exact_norm() {
        let a = SpectralOperator::dirichlet_laplacian(20);
        let op = build_reduction(&a, &DampingSpec::Scalar(-2.0)).unwrap();
        let (gm, gp) = gamma_bounds(2.0, a.omega_s_neg()).unwrap();
        let (m, mu) = decay_envelope(gm, gp).unwrap();
        for k in 0..=400 {
            let t = 0.05 * k as f64;
            assert!(op.exp(t).unwrap().norm() <= m * (-mu * t).exp() + 1e-9);
        }
    }

    #[test]
    fn resolvent_at_zero_is_inverse_norm() {
        let a = SpectralOperator::dirichlet_laplacian(6);
        let op = build_reduction(&a, &DampingSpec::Scalar(-2.0)).unwrap();
        let r0 = resolvent_norm(&op, c(0.0)).unwrap();
        assert!((r0 - inverse_norm(&op).unwrap()).abs() < 1e-12);
        // Near an eigenvalue.
        let e = op.eigenvalues()[0];
        assert!(matches!(resolvent_norm(&op, e), Err(Error::NearSpectrum { .. })));
        let near = resolvent_norm(&op, e + 1e-6).unwrap();
        assert!(near >= 1e6 * (1.0 - 1e-6));
    }

    #[test]
    fn resolvent_bound_branches() {
        let rb = resolvent_bound_imag_axis(1.0, 0.0, 0.4, 0.5).unwrap();
        assert_eq!(rb.at(0.0), 0.4 / 0.5);
        assert!((rb.far() - (3.0 * 0.4 + 0.5) / 0.5).abs() < 1e-15);
        let kappa = 1.0 / 0.4;
        let cor = resolvent_constant_from_lower_bound(1.0, 0.0, kappa).unwrap();
        assert!((rb.far() - cor).abs() < 1e-14);
        assert!(resolvent_bound_imag_axis(1.0, 0.0, 0.4, 1.0).is_err());
        assert!(resolvent_bound_imag_axis(1.0, 0.0, 0.4, 0.0).is_err());
    }

    #[test]
    fn resolvent_bound_dominates_on_grid() {
        let a = SpectralOperator::dirichlet_laplacian(16);
        let b = DampingSpec::Scalar(-2.0);
        let op = build_reduction(&a, &b).unwrap();
        let inv = inverse_norm(&op).unwrap();
        let rb = resolvent_bound_imag_axis(b.alpha(16), 0.0, inv, 0.5).unwrap();
        for k in -2000..=2000 {
            let bb = 0.05 * k as f64;
            assert!(resolvent_norm(&op, C64::new(0.0, bb)).unwrap() <= rb.at(bb));
        }
    }

    #[test]
    fn growth_estimate_examples() {
        assert_eq!(growth_bound_estimate(2.0, 0.0, 1.0).unwrap(), -1.0);
        let nu = growth_bound_estimate(2.0, 1.0, 1.0).unwrap();
        // Independent fine scan of the monotone function.
        let f = |x: f64| x * x + (2.0 * x / (2.0 + x)).powi(2) - 1.0;
        let mut scan = None;
        let steps = 2_000_000;
        for k in 1..steps {
            let x = -2.0 + 2.0 * k as f64 / steps as f64;
            if f(x) <= 0.0 {
                scan = Some(x);
                break;
            }
        }
        assert!((nu - scan.unwrap()).abs() < 2e-6, "{nu} vs {scan:?}");
        assert!(f(nu).abs() < 1e-9);
    }

    #[test]
    fn growth_estimate_certifies_sector_instance() {
        // B = (−4 + 4i)I gives α_B = 2 and γ_B = 1; pick λ so that ‖Λ^{−1}‖ = 1.
        let b = C64::new(-4.0, 4.0);
        let inv_norm_of = |lambda: f64| {
            let s = lambda.sqrt();
            linalg::norm2(&Matrix2::new(b / lambda, c(-1.0 / s), c(1.0 / s), c(0.0)))
        };
        let (mut lo, mut hi) = (1.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if inv_norm_of(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = hi;
        let a = SpectralOperator::new(vec![lambda, 4.0 * lambda], "t").unwrap();
        let damping = DampingSpec::Diagonal(vec![b, b]);
        let op = build_reduction(&a, &damping).unwrap();
        let inv = inverse_norm(&op).unwrap();
        assert!((inv - 1.0).abs() < 1e-9);
        assert_eq!(damping.alpha(2), 2.0);
        assert_eq!(damping.gamma(2), Some(1.0));
        let nu = growth_bound_estimate(2.0, 1.0, inv).unwrap();
        assert!(op.spectral_abscissa() <= nu);
    }

    #[test]
    fn surrogate_values() {
        let a = SpectralOperator::dirichlet_laplacian(10);
        let alpha = 0.7;
        let s = inverse_norm_surrogate(&a, &DampingSpec::Scalar(-2.0 * alpha)).unwrap();
        assert!((s - (2.0 * alpha / (PI * PI) + 2.0 / PI)).abs() < 1e-14);
        let s0 = inverse_norm_surrogate(&a, &DampingSpec::Scalar(0.0)).unwrap();
        assert!((s0 - 2.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn gpg_certificate_examples() {
        let a = SpectralOperator::dirichlet_laplacian(8);
        let b = DampingSpec::Scalar(-2.0);
        let op = build_reduction(&a, &b).unwrap();
        let grid: Vec<f64> = (0..=19).map(|k| -0.05 * k as f64).collect();
        let opts = GpgOptions { b_points: 600, ..GpgOptions::default() };
        let cert = gpg_numeric_growth_bound(&op, &b, &grid, &opts).unwrap();
        assert!((cert.exact_omega_g.unwrap() + 1.0).abs() < 1e-12);
        let certified = cert.certified.unwrap();
        assert!(certified <= -0.9 && certified >= -1.0, "{certified}");
        assert!(cert.analytic_bound >= cert.exact_omega_g.unwrap());

        let z = DampingSpec::Scalar(0.0);
        let op0 = build_reduction(&a, &z).unwrap();
        let cert0 = gpg_numeric_growth_bound(&op0, &z, &grid, &opts).unwrap();
        assert!(cert0.certified.map_or(true, |x| x >= 0.0));
    }

    #[test]
    fn analytic_cutoff_domain() {
        assert!(resolvent_b_cutoff(1.0, 0.0, 0.5, 0.0).is_some());
        assert!(resolvent_b_cutoff(1.0, 0.0, 1.5, 0.0).is_none());
        assert!(resolvent_b_cutoff(1.0, 0.0, 0.5, -0.6).is_none());
        let v = resolvent_b_cutoff(2.0, 1.0, 0.5, -0.5).unwrap();
        assert!((v - 2.0 * (1.5 + 1.0) / 1.0).abs() < 1e-15);
    }

    #[test]
    fn bound_report_csv_columns() {
        let a = SpectralOperator::dirichlet_laplacian(4);
        let reports = bound_reports(&a, &DampingSpec::Scalar(-2.0), &[0.0, -0.5], &GpgOptions {
            b_points: 200,
            ..GpgOptions::default()
        })
        .unwrap();
        let n_cols = BoundReport::CSV_HEADER.split(',').count();
        for r in &reports {
            assert_eq!(r.csv_row().split(',').count(), n_cols);
            if let (Some(gm), Some(gp)) = (r.gamma_minus, r.gamma_plus) {
                assert!(gm <= gp);
                assert!(r.decay_m.unwrap() >= 1.0);
            }
        }
        assert_eq!(reports[0].method, BoundMethod::Lyapunov);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn prop_scalar_formula(beta in -10.0f64..0.0, mut lam in proptest::collection::vec(0.01f64..500.0, 1..64)) {
            lam.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let formula = spectral_bound_scalar_damping(beta, -lam[0]);
            prop_assert!((formula - quadratic_oracle(beta, &lam)).abs() <= 1e-10);
        }

        #[test]
        fn prop_residual(alpha in 0.01f64..20.0, mut lam in proptest::collection::vec(0.01f64..1e4, 1..12), seed in 0u32..1000) {
            lam.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let a = SpectralOperator::new(lam, "r").unwrap();
            let op = build_reduction(&a, &DampingSpec::Scalar(-alpha)).unwrap();
            let p = lyapunov_solution(alpha, &a).unwrap();
            prop_assert!(p.uniqueness_gap() < 1e-10);
            let y = DVector::from_fn(op.dim(), |i, _| C64::new(((i as u32 * 7 + seed) % 11) as f64 - 5.0, ((i as u32 + seed) % 3) as f64));
            if y.norm() > 0.0 {
                prop_assert!(lyapunov_residual(&p, &op, &y).unwrap() <= 1e-10);
            }
        }

        #[test]
        fn prop_growth_estimates_dominate(vals in proptest::collection::vec((0.05f64..6.0, -5.0f64..5.0, 0.5f64..400.0), 1..10)) {
            let mut lam: Vec<f64> = vals.iter().map(|v| v.2).collect();
            lam.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let a = SpectralOperator::new(lam, "r").unwrap();
            let damping = DampingSpec::Diagonal(vals.iter().map(|v| C64::new(-v.0, v.1)).collect());
            let n = a.n_modes();
            let op = build_reduction(&a, &damping).unwrap();
            let exact = op.spectral_abscissa();
            let alpha = damping.alpha(n);
            let gamma = damping.gamma(n).unwrap();
            let nu1 = growth_bound_estimate(alpha, gamma, inverse_norm(&op).unwrap()).unwrap();
            let nu2 = growth_bound_from_operator_norms(&a, &damping, alpha, gamma).unwrap();
            prop_assert!(nu1 >= exact - 1e-12, "{nu1} < {exact}");
            prop_assert!(nu2 >= exact - 1e-12);
            prop_assert!(nu2 >= nu1 - 1e-12);
            prop_assert!(inverse_norm_surrogate(&a, &damping).unwrap() >= inverse_norm(&op).unwrap());
        }
    }
}
