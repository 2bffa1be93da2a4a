//! Memory operators as matrix-valued Stieltjes measures on `[−r, 0]`, delay
//! transfer functions, stability criteria, the structure operator and the
//! Green operator of the linear delay system `y' = Λy + F y_t`.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, c};
use crate::operator::{BlockOperator, SpectralOperator};
use crate::spectral::{self, resolvent_matrix};
use crate::{Error, Result, C64};

/// Which memory operator a kernel represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelTarget {
    /// `M: V → H`, matrices act on the mode coefficients of `u`.
    M,
    /// `N: H → H`, matrices act on the mode coefficients of `u'`.
    N,
    /// Combined `F = [[0, 0], [M, N]]` acting on energy-coordinate states.
    F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub theta: f64,
    pub weight: DMatrix<f64>,
}

/// Constant matrix density on `[start, end] ⊂ [−r, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPiece {
    pub start: f64,
    pub end: f64,
    pub density: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayKernel {
    horizon: f64,
    dim: usize,
    target: KernelTarget,
    atoms: Vec<Atom>,
    density: Vec<DensityPiece>,
}

fn check_square(m: &DMatrix<f64>, dim: usize, context: &'static str) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::DimensionMismatch {
            context,
            expected: dim,
            found: if m.nrows() != dim { m.nrows() } else { m.ncols() },
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("kernel matrix", "entries must be finite"));
    }
    Ok(())
}

impl DelayKernel {
    /// Zero kernel of the given target and matrix size.
    pub fn new(target: KernelTarget, horizon: f64, dim: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid("horizon", format!("must be positive, got {horizon}")));
        }
        Ok(Self {
            horizon,
            dim,
            target,
            atoms: Vec::new(),
            density: Vec::new(),
        })
    }

    pub fn with_atom(mut self, theta: f64, weight: DMatrix<f64>) -> Result<Self> {
        if !(theta >= -self.horizon - 1e-12 && theta <= 0.0) {
            return Err(Error::invalid("atom position", format!("{theta} is outside [-r, 0]")));
        }
        check_square(&weight, self.dim, "atom weight")?;
        self.atoms.push(Atom {
            theta: theta.max(-self.horizon),
            weight,
        });
        Ok(self)
    }

    pub fn with_density(mut self, start: f64, end: f64, density: DMatrix<f64>) -> Result<Self> {
        if !(start >= -self.horizon - 1e-12 && start < end && end <= 0.0) {
            return Err(Error::invalid(
                "density piece",
                format!("[{start}, {end}] is not a nonempty subinterval of [-r, 0]"),
            ));
        }
        check_square(&density, self.dim, "density matrix")?;
        self.density.push(DensityPiece {
            start: start.max(-self.horizon),
            end,
            density,
        });
        Ok(self)
    }

    /// Memory `c₁∂_ξu(t−1) + c₂u'(t−1)` of the damped wave equation on
    /// `(0, 1)` in Dirichlet modes: `M = c₁D` and `N = c₂I`, both atoms at
    /// `−1`, lifted to `F`.
    pub fn wave_point_delay(a: &SpectralOperator, c1: f64, c2: f64) -> Result<Self> {
        let n = a.n_modes();
        let m = DelayKernel::new(KernelTarget::M, 1.0, n)?
            .with_atom(-1.0, derivative_galerkin_matrix(n) * c1)?;
        let nn = DelayKernel::new(KernelTarget::N, 1.0, n)?
            .with_atom(-1.0, DMatrix::identity(n, n) * c2)?;
        DelayKernel::combine(Some(&m), Some(&nn), &a.sqrt_eigenvalues())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn target(&self) -> KernelTarget {
        self.target
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> &[DensityPiece] {
        &self.density
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|a| a.weight.iter().all(|&x| x == 0.0))
            && self.density.iter().all(|p| p.density.iter().all(|&x| x == 0.0))
    }

    /// `Σ‖C_k‖ + Σ‖ρ_j‖·|I_j|` with spectral norms.
    pub fn total_variation(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| linalg::norm_dense_real(&a.weight)).sum();
        let dens: f64 = self
            .density
            .iter()
            .map(|p| linalg::norm_dense_real(&p.density) * (p.end - p.start))
            .sum();
        atoms + dens
    }

    fn lift_matrix(&self, m: &DMatrix<f64>, sqrt_lambda: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        match self.target {
            KernelTarget::M => {
                for i in 0..n {
                    for j in 0..n {
                        out[(n + i, j)] = m[(i, j)] / sqrt_lambda[j];
                    }
                }
            }
            KernelTarget::N => out.view_mut((n, n), (n, n)).copy_from(m),
            KernelTarget::F => unreachable!(),
        }
        out
    }

    /// The same memory as an `F`-target kernel on energy coordinates. For `M`
    /// the matrices are composed with `A^{−1/2}` since `z₁ = A^{1/2}u`.
    pub fn lift(&self, sqrt_lambda: &[f64]) -> Result<Self> {
        if self.target == KernelTarget::F {
            return Ok(self.clone());
        }
        if sqrt_lambda.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "kernel vs number of modes",
                expected: self.dim,
                found: sqrt_lambda.len(),
            });
        }
        Ok(Self {
            horizon: self.horizon,
            dim: 2 * self.dim,
            target: KernelTarget::F,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    theta: a.theta,
                    weight: self.lift_matrix(&a.weight, sqrt_lambda),
                })
                .collect(),
            density: self
                .density
                .iter()
                .map(|p| DensityPiece {
                    start: p.start,
                    end: p.end,
                    density: self.lift_matrix(&p.density, sqrt_lambda),
                })
                .collect(),
        })
    }

    /// `F` from optional `M` and `N` kernels sharing a horizon.
    pub fn combine(m: Option<&Self>, n: Option<&Self>, sqrt_lambda: &[f64]) -> Result<Self> {
        let horizon = match (m, n) {
            (Some(a), Some(b)) => {
                if (a.horizon - b.horizon).abs() > 1e-12 {
                    return Err(Error::invalid("horizon", "M and N kernels must share r"));
                }
                a.horizon
            }
            (Some(a), None) | (None, Some(a)) => a.horizon,
            (None, None) => return Err(Error::invalid("kernel", "need at least one of M, N")),
        };
        let mut out = DelayKernel::new(KernelTarget::F, horizon, 2 * sqrt_lambda.len())?;
        for (k, want) in [(m, KernelTarget::M), (n, KernelTarget::N)] {
            if let Some(k) = k {
                if k.target != want {
                    return Err(Error::invalid("kernel target", format!("expected {want:?}")));
                }
                let lifted = k.lift(sqrt_lambda)?;
                out.atoms.extend(lifted.atoms);
                out.density.extend(lifted.density);
            }
        }
        Ok(out)
    }

    pub(crate) fn for_operator<'a>(&'a self, op: &BlockOperator) -> Result<Cow<'a, Self>> {
        let k = if self.target == KernelTarget::F {
            Cow::Borrowed(self)
        } else {
            Cow::Owned(self.lift(op.sqrt_lambda())?)
        };
        if k.dim != op.dim() {
            return Err(Error::DimensionMismatch {
                context: "kernel vs state dimension",
                expected: op.dim(),
                found: k.dim,
            });
        }
        Ok(k)
    }

    /// `F(ψ) = Σ C_k ψ(θ_k) + Σ ρ_j ∫_{I_j} ψ(θ)dθ`, with each density
    /// integral evaluated by composite Simpson on at least `⌈|I_j|/h⌉`
    /// subintervals. `ψ` may jump at `θ = split`; pieces are integrated
    /// separately on each side and `eval(θ, true)` asks for the left limit.
    /// Atoms call `eval(θ_k, atom_left(θ_k))`.
    pub(crate) fn apply_with(
        &self,
        h: f64,
        split: f64,
        atom_left: impl Fn(f64) -> bool,
        mut eval: impl FnMut(f64, bool) -> DMatrix<f64>,
        rows: usize,
        cols: usize,
    ) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(rows, cols);
        for a in &self.atoms {
            acc.gemm(1.0, &a.weight, &eval(a.theta, atom_left(a.theta)), 1.0);
        }
        for p in &self.density {
            let mut integral = DMatrix::zeros(rows, cols);
            let segments = if split > p.start && split < p.end {
                vec![(p.start, split, true), (split, p.end, false)]
            } else {
                vec![(p.start, p.end, p.end <= split)]
            };
            for (lo, hi, left) in segments {
                let len = hi - lo;
                let mut k = ((len / h).ceil() as usize).max(2);
                if k % 2 == 1 {
                    k += 1;
                }
                let dx = len / k as f64;
                for i in 0..=k {
                    let w = if i == 0 || i == k {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    integral += eval(lo + i as f64 * dx, left) * (w * dx / 3.0);
                }
            }
            acc.gemm(1.0, &p.density, &integral, 1.0);
        }
        acc
    }
}

/// Galerkin matrix of `∂/∂ξ` in the basis `√2 sin(nπξ)` on `(0, 1)`:
/// `D_{mn} = ⟨e_m, e_n'⟩ = 4mn/(m² − n²)` for `m + n` odd, else 0.
pub fn derivative_galerkin_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let (m, k) = ((i + 1) as f64, (j + 1) as f64);
        if (i + j) % 2 == 1 {
            4.0 * m * k / (m * m - k * k)
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transfer {
    pub matrix: DMatrix<C64>,
    pub norm: f64,
    /// `e^{|Re λ| r}·Var`.
    pub bound: f64,
}

/// `F(e^{λ·}) = Σ e^{λθ_k}C_k + Σ ρ_j (e^{λ e_j} − e^{λ s_j})/λ`.
pub fn delay_transfer(kernel: &DelayKernel, lambda: C64) -> Transfer {
    let d = kernel.dim;
    let mut m = DMatrix::<C64>::zeros(d, d);
    for a in &kernel.atoms {
        let w = (lambda * a.theta).exp();
        m += a.weight.map(|x| c(x) * w);
    }
    for p in &kernel.density {
        let w = if lambda.norm() * (p.end - p.start) < 1e-8 {
            // series of (e^{λe} − e^{λs})/λ
            let mid = (lambda * (0.5 * (p.start + p.end))).exp();
            mid * (p.end - p.start)
        } else {
            ((lambda * p.end).exp() - (lambda * p.start).exp()) / lambda
        };
        m += p.density.map(|x| c(x) * w);
    }
    let norm = linalg::norm_dense(&m);
    let bound = (lambda.re.abs() * kernel.horizon).exp() * kernel.total_variation();
    Transfer { matrix: m, norm, bound }
}

/// Grid used for suprema over `b` on vertical lines.
#[derive(Debug, Clone, PartialEq)]
pub struct BGrid {
    pub b_min: f64,
    /// `None` uses the default cutoff of the spectral module.
    pub cutoff: Option<f64>,
    pub points: usize,
    pub refine_peaks: usize,
}

impl Default for BGrid {
    fn default() -> Self {
        Self {
            b_min: 1e-3,
            cutoff: None,
            points: 1500,
            refine_peaks: 4,
        }
    }
}

impl BGrid {
    fn build(&self, op: &BlockOperator) -> (Vec<f64>, f64) {
        let damping = crate::operator::DampingSpec::Dense(op.damping_matrix());
        let cutoff = self
            .cutoff
            .unwrap_or_else(|| spectral::default_b_cutoff(op, &damping));
        (spectral::log_b_grid(self.b_min, cutoff, self.points), cutoff)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub a: f64,
    /// `sup_b ‖F(e^{(a+ib)·})‖`
    pub lhs: f64,
    /// `1/sup_b ‖R(a+ib, Λ)‖`
    pub rhs: f64,
    pub holds: bool,
    pub b_cutoff: f64,
}

fn check_line(a: f64, op: &BlockOperator) -> Result<()> {
    if !(a <= 0.0) {
        return Err(Error::Precondition(format!("line a = {a} must satisfy a <= 0")));
    }
    let omega = op.spectral_abscissa();
    if !(a > omega) {
        return Err(Error::Precondition(format!(
            "line a = {a} must lie right of the growth bound {omega} of the undelayed generator"
        )));
    }
    Ok(())
}

/// Small-gain delay criterion on the line `a + iℝ`: certifies that the
/// delayed semigroup has growth bound below `a` when
/// `sup_b‖F(e^{(a+ib)·})‖ < 1/sup_b‖R(a+ib, Λ)‖`.
pub fn stability_criterion(
    a: f64,
    kernel: &DelayKernel,
    op: &BlockOperator,
    grid: &BGrid,
) -> Result<StabilityVerdict> {
    check_line(a, op)?;
    let k = kernel.for_operator(op)?;
    let (g, cutoff) = grid.build(op);
    let lhs = spectral::sup_on_grid(
        |b| delay_transfer(&k, C64::new(a, b)).norm,
        &g,
        grid.refine_peaks,
    );
    let rsup = spectral::sup_on_grid(
        |b| spectral::resolvent_norm(op, C64::new(a, b)).unwrap_or(f64::INFINITY),
        &g,
        grid.refine_peaks,
    );
    let rhs = 1.0 / rsup;
    Ok(StabilityVerdict {
        a,
        lhs,
        rhs,
        holds: lhs < rhs,
        b_cutoff: cutoff,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesVerdict {
    pub a: f64,
    /// `q_a = sup_b ‖F(e^{(a+ib)·})R(a+ib, Λ)‖`
    pub q_a: f64,
    pub certified: bool,
    /// `q_aⁿ` for `n = 1..=n_max`, the geometric majorants of the series
    /// terms.
    pub majorants: Vec<f64>,
}

/// Neumann-series criterion: `q_a < 1` makes `Σ α_{a,n} ≤ Σ q_aⁿ` finite.
pub fn series_criterion(
    a: f64,
    kernel: &DelayKernel,
    op: &BlockOperator,
    grid: &BGrid,
    n_max: usize,
) -> Result<SeriesVerdict> {
    check_line(a, op)?;
    let k = kernel.for_operator(op)?;
    let (g, _) = grid.build(op);
    let q_a = if k.is_zero() {
        0.0
    } else {
        spectral::sup_on_grid(
            |b| {
                let lam = C64::new(a, b);
                match resolvent_matrix(op, lam) {
                    Ok(r) => linalg::norm_dense(&(delay_transfer(&k, lam).matrix * r)),
                    Err(_) => f64::INFINITY,
                }
            },
            &g,
            grid.refine_peaks,
        )
    };
    Ok(SeriesVerdict {
        a,
        q_a,
        certified: q_a < 1.0,
        majorants: (1..=n_max).map(|n| q_a.powi(n as i32)).collect(),
    })
}

/// A history segment sampled at `θ_j = −r + j·step`, `j = 0..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySegment {
    horizon: f64,
    samples: Vec<DVector<f64>>,
}

impl HistorySegment {
    pub fn new(horizon: f64, samples: Vec<DVector<f64>>) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon", "must be positive"));
        }
        if samples.len() < 2 {
            return Err(Error::GridMismatch { expected: 2, found: samples.len() });
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::invalid("history", "samples must share one dimension"));
        }
        Ok(Self { horizon, samples })
    }

    /// Samples `f(θ)` on `m + 1` equispaced nodes.
    pub fn from_fn(horizon: f64, m: usize, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let step = horizon / m as f64;
        Self::new(horizon, (0..=m).map(|j| f(-horizon + j as f64 * step)).collect())
    }

    pub fn zeros(horizon: f64, m: usize, dim: usize) -> Result<Self> {
        Self::from_fn(horizon, m, |_| DVector::zeros(dim))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn intervals(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.intervals() as f64
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub fn theta(&self, j: usize) -> f64 {
        -self.horizon + j as f64 * self.step()
    }

    /// Piecewise-linear interpolant at `θ ∈ [−r, 0]`.
    pub fn eval(&self, theta: f64) -> DVector<f64> {
        let m = self.intervals();
        let x = ((theta + self.horizon) / self.step()).clamp(0.0, m as f64);
        let j = (x.floor() as usize).min(m - 1);
        let w = x - j as f64;
        if w <= 1e-12 {
            return self.samples[j].clone();
        }
        if w >= 1.0 - 1e-12 {
            return self.samples[j + 1].clone();
        }
        &self.samples[j] * (1.0 - w) + &self.samples[j + 1] * w
    }

    /// Four-point Lagrange interpolant at `θ ∈ [−r, 0]`; falls back to the
    /// linear one when there are fewer than three intervals.
    pub fn eval_cubic(&self, theta: f64) -> DVector<f64> {
        let m = self.intervals();
        if m < 3 {
            return self.eval(theta);
        }
        let x = ((theta + self.horizon) / self.step()).clamp(0.0, m as f64);
        let near = x.round();
        if (x - near).abs() <= 1e-12 {
            return self.samples[near as usize].clone();
        }
        let i = (x.floor() as usize).min(m - 1);
        let lo = i.saturating_sub(1).min(m - 3);
        let mut acc = DVector::zeros(self.dim());
        for j in lo..=lo + 3 {
            let mut w = 1.0;
            for l in lo..=lo + 3 {
                if l != j {
                    w *= (x - l as f64) / (j as f64 - l as f64);
                }
            }
            acc.axpy(w, &self.samples[j], 1.0);
        }
        acc
    }

    /// Trapezoidal `L²([−r, 0])` norm.
    pub fn l2_norm(&self) -> f64 {
        let h = self.step();
        let m = self.intervals();
        let s: f64 = self
            .samples
            .iter()
            .enumerate()
            .map(|(j, v)| v.norm_squared() * if j == 0 || j == m { 0.5 } else { 1.0 })
            .sum();
        (s * h).sqrt()
    }
}

/// `(Sφ)(θ) = Σ_{θ_k ≤ θ} C_k φ(θ_k − θ) + ∫_{[−r, θ]} ρ(σ) φ(σ − θ) dσ`,
/// i.e. `F` applied to the shifted segment with zero extension to the right.
/// `φ` is taken as its four-point Lagrange interpolant and the density
/// integral uses Simpson's rule between consecutive history nodes.
pub fn structure_operator_apply(kernel: &DelayKernel, phi: &HistorySegment) -> Result<HistorySegment> {
    if (kernel.horizon - phi.horizon).abs() > 1e-12 * kernel.horizon {
        return Err(Error::invalid("history", "horizon differs from the kernel's"));
    }
    if kernel.dim != phi.dim() {
        return Err(Error::DimensionMismatch {
            context: "history vs kernel dimension",
            expected: kernel.dim,
            found: phi.dim(),
        });
    }
    let m = phi.intervals();
    let h = phi.step();
    let r = phi.horizon;
    let tol = 1e-12 * r;
    let mut out = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let theta = phi.theta(j);
        let mut v = DVector::zeros(kernel.dim);
        for a in &kernel.atoms {
            if a.theta <= theta + tol {
                v.gemv(1.0, &a.weight, &phi.eval((a.theta - theta).min(0.0)), 1.0);
            }
        }
        for p in &kernel.density {
            let lo = p.start;
            let hi = p.end.min(theta);
            if hi <= lo + tol {
                continue;
            }
            // Breakpoints: piece ends and the shifted history nodes.
            let mut pts = vec![lo, hi];
            for i in 0..=m {
                let s = -r + i as f64 * h;
                if s > lo + tol && s < hi - tol {
                    pts.push(s);
                }
            }
            pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let at = |s: f64| phi.eval_cubic((s - theta).clamp(-r, 0.0));
            let mut integral = DVector::zeros(kernel.dim);
            let mut prev = at(pts[0]);
            for w in pts.windows(2) {
                let next = at(w[1]);
                let mid = at(0.5 * (w[0] + w[1]));
                integral += (&prev + &next + mid * 4.0) * ((w[1] - w[0]) / 6.0);
                prev = next;
            }
            v.gemv(1.0, &p.density, &integral, 1.0);
        }
        out.push(v);
    }
    HistorySegment::new(r, out)
}

/// Samples `G(t_k)`, `t_k = k·h`, of the fundamental solution.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenOperator {
    step: f64,
    samples: Vec<DMatrix<f64>>,
}

impl GreenOperator {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        self.step * (self.samples.len() - 1) as f64
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.samples[0].nrows()
    }

    /// `G(t)`: zero for `t < 0`, linear interpolation between samples.
    pub fn at(&self, t: f64) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if t < 0.0 {
            return Ok(DMatrix::zeros(d, d));
        }
        let x = t / self.step;
        let k = x.floor() as usize;
        if k + 1 >= self.samples.len() {
            if (x - (self.samples.len() - 1) as f64).abs() <= 1e-9 {
                return Ok(self.samples.last().unwrap().clone());
            }
            return Err(Error::invalid("t", format!("{t} beyond the sampled horizon")));
        }
        let w = x - k as f64;
        if w <= 1e-9 {
            return Ok(self.samples[k].clone());
        }
        Ok(&self.samples[k] * (1.0 - w) + &self.samples[k + 1] * w)
    }

    /// Sample index for `t`, if `t` is on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = t / self.step;
        let k = x.round();
        ((x - k).abs() <= 1e-9 && k >= 0.0 && (k as usize) < self.samples.len()).then_some(k as usize)
    }

    pub const CSV_HEADER: &'static str = "t,frobenius,spectral";

    pub fn csv_rows(&self) -> Vec<String> {
        self.samples
            .iter()
            .enumerate()
            .map(|(k, g)| {
                format!(
                    "{:.10},{:.12e},{:.12e}",
                    k as f64 * self.step,
                    g.norm(),
                    linalg::norm_dense_real(g)
                )
            })
            .collect()
    }
}

fn check_steps(op_norm: f64, r: f64, horizon: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) {
        return Err(Error::invalid("h", "must be positive"));
    }
    if h > r / 16.0 + 1e-15 {
        return Err(Error::invalid("h", format!("must satisfy h <= r/16 = {}", r / 16.0)));
    }
    let steps = (horizon / h).round();
    if horizon < 0.0 || (steps * h - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::invalid("T", format!("{horizon} is not a nonnegative multiple of h = {h}")));
    }
    if h * op_norm > 1.0 {
        return Err(Error::UnstableStep {
            h,
            product: h * op_norm,
            limit: 1.0,
            suggested: 1.0 / op_norm,
        });
    }
    Ok(steps as usize)
}

fn lagrange_eval(samples: &[DMatrix<f64>], h: f64, tau: f64) -> DMatrix<f64> {
    let k = samples.len() - 1;
    let x = tau / h;
    let near = x.round();
    if (x - near).abs() <= 1e-9 && near >= 0.0 && near as usize <= k {
        return samples[near as usize].clone();
    }
    let i = (x.floor() as isize).clamp(0, k as isize) as usize;
    let (lo, hi) = if k < 3 {
        (0, k)
    } else {
        let lo = i.saturating_sub(1).min(k - 3);
        (lo, lo + 3)
    };
    let mut acc = DMatrix::zeros(samples[0].nrows(), samples[0].ncols());
    for j in lo..=hi {
        let mut w = 1.0;
        for l in lo..=hi {
            if l != j {
                w *= (x - l as f64) / (j as f64 - l as f64);
            }
        }
        acc += &samples[j] * w;
    }
    acc
}

/// Method of steps with classical RK4 for `Y' = ΛY + F(Y_t)`.
///
/// Delayed values at `τ < 0` come from `history`; on the computed range they
/// use 4-point Lagrange interpolation (stencil kept inside `[0, t_k]` so the
/// jump at `0` is not smeared); within the current step they interpolate
/// linearly towards the stage value.
fn method_of_steps(
    lam: &DMatrix<f64>,
    kernel: &DelayKernel,
    y0: DMatrix<f64>,
    history: &dyn Fn(f64) -> DMatrix<f64>,
    steps: usize,
    h: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let (rows, cols) = (y0.nrows(), y0.ncols());
    let mut out = Vec::with_capacity(steps + 1);
    out.push(y0);
    let deriv = |out: &Vec<DMatrix<f64>>, t_k: f64, s: f64, ys: &DMatrix<f64>| {
        let mut d = lam * ys;
        if !kernel.is_zero() {
            let yk = out.last().unwrap();
            let eval = |theta: f64, left: bool| {
                let mut tau = s + theta;
                if tau.abs() <= 1e-9 * h {
                    tau = 0.0;
                }
                if tau < 0.0 || (left && tau <= 0.0) {
                    history(tau)
                } else if tau <= t_k + 1e-9 * h {
                    lagrange_eval(out, h, tau)
                } else {
                    let w = (tau - t_k) / (s - t_k);
                    yk * (1.0 - w) + ys * w
                }
            };
            // A step whose delayed window starts in the past reads the
            // history's left limit at τ = 0, not the state y(0).
            let atom_left = |theta: f64| t_k + theta < -1e-9 * h;
            d += kernel.apply_with(h, -s, atom_left, eval, rows, cols);
        }
        d
    };
    for k in 0..steps {
        let t = k as f64 * h;
        let y = out[k].clone();
        let k1 = deriv(&out, t, t, &y);
        let y2 = &y + &k1 * (0.5 * h);
        let k2 = deriv(&out, t, t + 0.5 * h, &y2);
        let y3 = &y + &k2 * (0.5 * h);
        let k3 = deriv(&out, t, t + 0.5 * h, &y3);
        let y4 = &y + &k3 * h;
        let k4 = deriv(&out, t, t + h, &y4);
        let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { step: k + 1, t: t + h });
        }
        out.push(next);
    }
    Ok(out)
}

fn real_generator(op: &BlockOperator) -> Result<DMatrix<f64>> {
    op.to_real_dense()
        .ok_or_else(|| Error::Precondition("delay integration needs real damping".into()))
}

/// Fundamental solution of `y' = Λy + F y_t`, `y(0) = x`, zero history, by
/// the method of steps. Requires `h ≤ r/16`, `T` a multiple of `h` and
/// `h‖Λ‖ ≤ 1`.
pub fn green_operator(op: &BlockOperator, kernel: &DelayKernel, horizon: f64, h: f64) -> Result<GreenOperator> {
    let k = kernel.for_operator(op)?;
    let steps = check_steps(op.norm(), k.horizon, horizon, h)?;
    let lam = real_generator(op)?;
    let d = op.dim();
    let zero = DMatrix::zeros(d, d);
    let samples = method_of_steps(&lam, &k, DMatrix::identity(d, d), &|_| zero.clone(), steps, h)?;
    Ok(GreenOperator { step: h, samples })
}

/// Direct method-of-steps solution with initial state `φ₀` and history `φ₁`.
/// Returns `y(t_k)` for `t_k = k·h`.
pub fn solve_delay_system(
    op: &BlockOperator,
    kernel: &DelayKernel,
    phi0: &DVector<f64>,
    phi1: &HistorySegment,
    horizon: f64,
    h: f64,
) -> Result<Vec<DVector<f64>>> {
    let k = kernel.for_operator(op)?;
    let steps = check_steps(op.norm(), k.horizon, horizon, h)?;
    op.check_state(phi0.len())?;
    if phi1.dim() != phi0.len() {
        return Err(Error::DimensionMismatch {
            context: "history vs state",
            expected: phi0.len(),
            found: phi1.dim(),
        });
    }
    let lam = real_generator(op)?;
    let d = phi0.len();
    let y0 = DMatrix::from_column_slice(d, 1, phi0.as_slice());
    let hist = |tau: f64| {
        let v = phi1.eval_cubic(tau.max(-phi1.horizon()));
        DMatrix::from_column_slice(d, 1, v.as_slice())
    };
    let out = method_of_steps(&lam, &k, y0, &hist, steps, h)?;
    Ok(out.into_iter().map(|m| m.column(0).into_owned()).collect())
}

/// Composite Simpson weights on `n` equal intervals of width `h`, using the
/// 3/8 rule on the last three intervals when `n` is odd.
pub(crate) fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n + 1];
    match n {
        0 => {}
        1 => {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
        }
        _ => {
            let (simpson_end, tail) = if n % 2 == 0 { (n, false) } else { (n - 3, true) };
            for i in (0..simpson_end).step_by(2) {
                w[i] += h / 3.0;
                w[i + 1] += 4.0 * h / 3.0;
                w[i + 2] += h / 3.0;
            }
            if tail {
                let s = simpson_end;
                for (j, c) in [1.0, 3.0, 3.0, 1.0].iter().enumerate() {
                    w[s + j] += 3.0 * h / 8.0 * c;
                }
            }
        }
    }
    w
}

/// `y(t) = G(t)φ₀ + ∫_{max(−r,−t)}^0 G(t+θ)(Sφ₁)(θ)dθ` at every sample time
/// of `g`. The history grid step must equal the Green operator step.
pub fn voc_reconstruct(
    g: &GreenOperator,
    kernel: &DelayKernel,
    op: &BlockOperator,
    phi0: &DVector<f64>,
    phi1: &HistorySegment,
) -> Result<Vec<DVector<f64>>> {
    let k = kernel.for_operator(op)?;
    if (phi1.step() - g.step).abs() > 1e-12 * g.step {
        return Err(Error::GridMismatch {
            expected: (k.horizon / g.step).round() as usize + 1,
            found: phi1.samples().len(),
        });
    }
    let s_phi = structure_operator_apply(&k, phi1)?;
    let m = phi1.intervals();
    let mut out = Vec::with_capacity(g.samples.len());
    for (idx, gt) in g.samples.iter().enumerate() {
        let mut y = gt * phi0;
        // θ_j = −r + j·h, admissible when t + θ_j ≥ 0.
        let j0 = m.saturating_sub(idx);
        let n = m - j0;
        if n == 1 && g.samples.len() >= 4 {
            // One interval: Simpson with interpolated midpoint values.
            let h = g.step;
            let g_mid = lagrange_eval(&g.samples, h, 0.5 * h);
            let s_mid = s_phi.eval_cubic(-0.5 * h);
            y.gemv(h / 6.0, &g.samples[0], &s_phi.samples()[m - 1], 1.0);
            y.gemv(4.0 * h / 6.0, &g_mid, &s_mid, 1.0);
            y.gemv(h / 6.0, &g.samples[1], &s_phi.samples()[m], 1.0);
        } else if n > 0 {
            let w = simpson_weights(n, g.step);
            for (i, wi) in w.iter().enumerate() {
                let j = j0 + i;
                let gi = &g.samples[idx + j - m];
                y.gemv(*wi, gi, &s_phi.samples()[j], 1.0);
            }
        }
        out.push(y);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    /// Fitted rate `γ` in `‖G(t)‖ ≈ M e^{−γt}`; negative when growing.
    pub gamma: f64,
    /// `max(1, max_t ‖G(t)‖e^{γt})`, so the envelope dominates every sample.
    pub m: f64,
    /// `γ` is positive beyond roundoff over the fit window.
    pub decaying: bool,
    /// Set when the tail has too few nonzero samples to fit.
    pub degenerate: bool,
    pub window: (f64, f64),
}

/// Least-squares fit of `log‖G(t)‖` on the tail half of the sample window.
pub fn delay_semigroup_decay(g: &GreenOperator) -> DecayFit {
    let n = g.samples.len();
    let t_end = g.horizon();
    let start = n / 2;
    let norms: Vec<f64> = g.samples.iter().map(linalg::norm_dense_real).collect();
    let pts: Vec<(f64, f64)> = (start..n)
        .filter(|&k| norms[k] > 0.0 && norms[k].is_finite())
        .map(|k| (k as f64 * g.step, norms[k].ln()))
        .collect();
    let window = (start as f64 * g.step, t_end);
    if pts.len() < 2 {
        return DecayFit { gamma: 0.0, m: 1.0, decaying: false, degenerate: true, window };
    }
    let np = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / np;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / np;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return DecayFit { gamma: 0.0, m: 1.0, decaying: false, degenerate: true, window };
    }
    let gamma = -sxy / sxx;
    let m = norms
        .iter()
        .enumerate()
        .map(|(k, &v)| v * (gamma * k as f64 * g.step).exp())
        .fold(1.0, f64::max);
    // Log-norm changes below 1e-6 across the window are roundoff.
    let decaying = gamma * (window.1 - window.0) > 1e-6;
    DecayFit { gamma, m, decaying, degenerate: false, window }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{build_reduction, DampingSpec};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn setup(n: usize, beta: f64) -> (SpectralOperator, BlockOperator) {
        let a = SpectralOperator::dirichlet_laplacian(n);
        let op = build_reduction(&a, &DampingSpec::Scalar(beta)).unwrap();
        (a, op)
    }

    #[test]
    fn galerkin_derivative_matches_quadrature() {
        let n = 6;
        let d = derivative_galerkin_matrix(n);
        let q = 20000;
        for i in 0..n {
            for j in 0..n {
                let (m, k) = ((i + 1) as f64, (j + 1) as f64);
                // midpoint rule for 2kπ ∫ sin(mπx) cos(kπx) dx
                let s: f64 = (0..q)
                    .map(|l| {
                        let x = (l as f64 + 0.5) / q as f64;
                        (m * PI * x).sin() * (k * PI * x).cos()
                    })
                    .sum::<f64>()
                    / q as f64;
                assert!((d[(i, j)] - 2.0 * k * PI * s).abs() < 1e-6, "{i},{j}");
            }
        }
        assert!((d.clone() + d.transpose()).norm() < 1e-12);
    }

    #[test]
    fn transfer_examples() {
        let k = DelayKernel::new(KernelTarget::F, 1.0, 2)
            .unwrap()
            .with_atom(-1.0, DMatrix::identity(2, 2) * 0.3)
            .unwrap();
        for b in [-10.0, -1.0, 0.0, 0.5, 3.0, 100.0] {
            let t = delay_transfer(&k, C64::new(0.0, b));
            assert!((t.norm - 0.3).abs() < 1e-14);
        }
        let t = delay_transfer(&k, C64::new(-0.5, 0.0));
        assert!(t.norm <= 0.3 * 0.5f64.exp() + 1e-15);
        assert!((t.bound - 0.3 * 0.5f64.exp()).abs() < 1e-15);

        let d = DelayKernel::new(KernelTarget::F, 1.0, 1)
            .unwrap()
            .with_atom(-0.25, DMatrix::from_element(1, 1, 2.0))
            .unwrap()
            .with_density(-1.0, -0.5, DMatrix::from_element(1, 1, 3.0))
            .unwrap();
        let t0 = delay_transfer(&d, C64::new(0.0, 0.0));
        assert!((t0.matrix[(0, 0)].re - (2.0 + 1.5)).abs() < 1e-12);
        assert!((d.total_variation() - 3.5).abs() < 1e-15);
    }

    #[test]
    fn lifted_m_kernel_is_isometric_for_wave_example() {
        let a = SpectralOperator::dirichlet_laplacian(16);
        let f = DelayKernel::wave_point_delay(&a, 1.0, 0.0).unwrap();
        assert_eq!(f.target(), KernelTarget::F);
        assert_eq!(f.dim(), 32);
        // ∂_ξ: V → H has norm 1; the truncated version cannot exceed it.
        let tv = f.total_variation();
        assert!(tv <= 1.0 + 1e-12 && tv > 0.5, "{tv}");
    }

    #[test]
    fn criterion_holds_for_zero_kernel_and_fails_for_heavy_atom() {
        let (_, op) = setup(4, -2.0);
        let grid = BGrid { points: 300, ..BGrid::default() };
        let zero = DelayKernel::new(KernelTarget::F, 1.0, 8).unwrap();
        let v = stability_criterion(-0.5, &zero, &op, &grid).unwrap();
        assert!(v.holds && v.lhs == 0.0);
        let s = series_criterion(-0.5, &zero, &op, &grid, 5).unwrap();
        assert_eq!(s.q_a, 0.0);

        let heavy = DelayKernel::new(KernelTarget::F, 1.0, 8)
            .unwrap()
            .with_atom(-1.0, DMatrix::identity(8, 8) * (2.0 * v.rhs))
            .unwrap();
        assert!(!stability_criterion(0.0, &heavy, &op, &grid).unwrap().holds);

        assert!(matches!(
            stability_criterion(-1.5, &zero, &op, &grid),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn wave_example_criteria_at_zero() {
        let (a, op) = setup(16, -2.0);
        let f = DelayKernel::wave_point_delay(&a, 0.04, 0.0).unwrap();
        let grid = BGrid { points: 400, ..BGrid::default() };
        let v = stability_criterion(0.0, &f, &op, &grid).unwrap();
        assert!(v.holds, "{v:?}");
        let s = series_criterion(0.0, &f, &op, &grid, 10).unwrap();
        assert!(s.certified && s.q_a <= v.lhs / v.rhs + 1e-12);
    }

    #[test]
    fn structure_operator_single_atom_reverses_history() {
        let r = 1.0;
        let k = DelayKernel::new(KernelTarget::F, r, 2)
            .unwrap()
            .with_atom(-r, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, -1.0]))
            .unwrap();
        let phi = HistorySegment::from_fn(r, 32, |t| DVector::from_vec(vec![t.sin(), t * t])).unwrap();
        let s = structure_operator_apply(&k, &phi).unwrap();
        for j in 0..=32 {
            let th = phi.theta(j);
            let src = phi.eval(-r - th);
            let want = &k.atoms()[0].weight * src;
            assert!((&s.samples()[j] - want).norm() < 1e-14);
        }
        let zero = DelayKernel::new(KernelTarget::F, r, 2).unwrap();
        let s0 = structure_operator_apply(&zero, &phi).unwrap();
        assert!(s0.samples().iter().all(|v| v.norm() == 0.0));
        let wrong = HistorySegment::from_fn(2.0, 32, |_| DVector::zeros(2)).unwrap();
        assert!(structure_operator_apply(&k, &wrong).is_err());
    }

    #[test]
    fn structure_operator_uniform_density_matches_quadrature() {
        let r = 1.0;
        let rho = 0.7;
        let k = DelayKernel::new(KernelTarget::F, r, 1)
            .unwrap()
            .with_density(-r, 0.0, DMatrix::from_element(1, 1, rho))
            .unwrap();
        let m = 200;
        let phi = HistorySegment::from_fn(r, m, |t| DVector::from_element(1, (3.0 * t).cos())).unwrap();
        let s = structure_operator_apply(&k, &phi).unwrap();
        for j in (0..=m).step_by(20) {
            let th = phi.theta(j);
            // ∫_{−r}^{θ} ρ cos(3(σ−θ)) dσ = ρ sin(3(r+θ))/3
            let exact = rho * (3.0 * (r + th)).sin() / 3.0;
            assert!((s.samples()[j][0] - exact).abs() < 1e-4, "{j}");
        }
    }

    #[test]
    fn green_without_delay_is_semigroup() {
        let (_, op) = setup(2, -2.0);
        let zero = DelayKernel::new(KernelTarget::F, 1.0, 4).unwrap();
        let g = green_operator(&op, &zero, 10.0, 1.0 / 128.0).unwrap();
        for (k, gk) in g.samples().iter().enumerate().step_by(16) {
            let e = op.exp(k as f64 / 128.0).unwrap().to_dense().map(|z| z.re);
            assert!(linalg::norm_dense_real(&(gk - e)) <= 1e-6);
        }
        assert_eq!(g.at(-0.5).unwrap(), DMatrix::zeros(4, 4));
        assert_eq!(g.at(0.0).unwrap(), DMatrix::identity(4, 4));
    }

    #[test]
    fn green_step_checks() {
        let (_, op) = setup(16, -2.0);
        let zero = DelayKernel::new(KernelTarget::F, 1.0, 32).unwrap();
        assert!(matches!(
            green_operator(&op, &zero, 1.0, 1.0 / 16.0),
            Err(Error::UnstableStep { .. })
        ));
        assert!(green_operator(&op, &zero, 1.0, 0.1).is_err());
        assert!(green_operator(&op, &zero, 1.003, 1.0 / 128.0).is_err());
    }

    #[test]
    fn voc_matches_direct_solver() {
        let (a, op) = setup(3, -2.0);
        let f = DelayKernel::wave_point_delay(&a, 0.3, 0.2)
            .unwrap()
            .with_density(-0.75, -0.25, DMatrix::from_fn(6, 6, |i, j| 0.05 * ((i + 2 * j) % 3) as f64))
            .unwrap();
        let h = 1.0 / 64.0;
        let phi1 = HistorySegment::from_fn(1.0, 64, |t| {
            DVector::from_fn(6, |i, _| ((i + 1) as f64 * t).sin() + 0.2 * (i as f64) * t)
        })
        .unwrap();
        let phi0 = DVector::from_fn(6, |i, _| 1.0 - 0.1 * i as f64);
        let g = green_operator(&op, &f, 4.0, h).unwrap();
        let voc = voc_reconstruct(&g, &f, &op, &phi0, &phi1).unwrap();
        let direct = solve_delay_system(&op, &f, &phi0, &phi1, 4.0, h).unwrap();
        let err = voc
            .iter()
            .zip(&direct)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(err <= 1e-5, "max deviation {err}");
    }

    #[test]
    fn voc_with_zero_history_is_green_times_state() {
        let (a, op) = setup(2, -1.0);
        let f = DelayKernel::wave_point_delay(&a, 0.1, 0.1).unwrap();
        let h = 1.0 / 32.0;
        let g = green_operator(&op, &f, 2.0, h).unwrap();
        let phi0 = DVector::from_vec(vec![1.0, -1.0, 0.5, 0.0]);
        let phi1 = HistorySegment::zeros(1.0, 32, 4).unwrap();
        let voc = voc_reconstruct(&g, &f, &op, &phi0, &phi1).unwrap();
        for (k, y) in voc.iter().enumerate() {
            assert!((y - &g.samples()[k] * &phi0).norm() < 1e-14);
        }
    }

    #[test]
    fn decay_fit_cases() {
        let (_, op) = setup(1, -2.0);
        let zero = DelayKernel::new(KernelTarget::F, 1.0, 2).unwrap();
        let g = green_operator(&op, &zero, 20.0, 1.0 / 64.0).unwrap();
        let fit = delay_semigroup_decay(&g);
        assert!(fit.gamma >= 0.9 && fit.gamma <= 1.1, "{fit:?}");
        assert!(fit.m >= 1.0 && fit.decaying);

        let dead = GreenOperator {
            step: 0.1,
            samples: (0..20)
                .map(|k| if k == 0 { DMatrix::identity(2, 2) } else { DMatrix::zeros(2, 2) })
                .collect(),
        };
        assert!(delay_semigroup_decay(&dead).degenerate);
    }

    #[test]
    fn simpson_weights_integrate_cubics() {
        for n in 1..12usize {
            let h = 0.3;
            let w = simpson_weights(n, h);
            let s: f64 = w.iter().enumerate().map(|(i, wi)| wi * (i as f64 * h).powi(if n == 1 { 1 } else { 3 })).sum();
            let l = n as f64 * h;
            let exact = if n == 1 { l * l / 2.0 } else { l.powi(4) / 4.0 };
            assert!((s - exact).abs() < 1e-12 * exact.max(1.0), "n={n}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_transfer_bound(a in -2.0f64..0.0, b in -50.0f64..50.0, w1 in -1.0f64..1.0, w2 in -1.0f64..1.0, th in -1.0f64..0.0) {
            let k = DelayKernel::new(KernelTarget::F, 1.0, 2).unwrap()
                .with_atom(th, DMatrix::from_row_slice(2, 2, &[w1, w2, 0.0, w1 * w2])).unwrap()
                .with_density(-1.0, th.min(-0.01), DMatrix::from_row_slice(2, 2, &[w2, 0.0, w1, 1.0])).unwrap();
            let t = delay_transfer(&k, C64::new(a, b));
            prop_assert!(t.norm <= t.bound * (1.0 + 1e-12) + 1e-14);
        }

        #[test]
        fn prop_structure_operator_bounded(seed in 0u64..500) {
            let r = 1.0;
            let k = DelayKernel::new(KernelTarget::F, r, 2).unwrap()
                .with_atom(-0.5, DMatrix::from_row_slice(2, 2, &[0.5, -0.2, 0.1, 0.3])).unwrap()
                .with_density(-1.0, -0.2, DMatrix::from_row_slice(2, 2, &[0.2, 0.0, -0.4, 0.1])).unwrap();
            let s = seed as f64;
            let phi = HistorySegment::from_fn(r, 64, |t| DVector::from_vec(vec![(s * t).sin(), (t + s).cos()])).unwrap();
            let out = structure_operator_apply(&k, &phi).unwrap();
            prop_assert!(out.l2_norm() <= k.total_variation() * r.sqrt() * phi.l2_norm() * 1.5 + 1e-12);
        }
    }
}
