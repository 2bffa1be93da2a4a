//! Stiffness operator `A`, damping `B` and the first-order block generator.
//!
//! States are laid out as `[z₁; z₂]` with `z₁ = A^{1/2}u` and `z₂ = u'`, both
//! of length `N`; mode `n` therefore occupies entries `n` and `N + n`. In these
//! coordinates the generator is `Λ₀ = [[0, A^{1/2}], [−A^{1/2}, B]]` and the
//! energy norm is Euclidean.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::linalg::{self, c};
use crate::{Error, Result, C64};

/// Self-adjoint positive operator given by its eigenvalues in an orthonormal
/// mode basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperator {
    eigenvalues: Vec<f64>,
    basis_label: String,
}

impl SpectralOperator {
    pub fn new(eigenvalues: Vec<f64>, basis_label: impl Into<String>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("eigenvalues", "at least one mode is required"));
        }
        for (index, &value) in eigenvalues.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveEigenvalue { index, value });
            }
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("eigenvalues", "must be sorted in nondecreasing order"));
        }
        Ok(Self {
            eigenvalues,
            basis_label: basis_label.into(),
        })
    }

    /// `−∂²/∂ξ²` on `(0, 1)` with Dirichlet conditions: `λ_n = (nπ)²`,
    /// eigenfunctions `√2 sin(nπξ)`.
    pub fn dirichlet_laplacian(n_modes: usize) -> Self {
        let eigenvalues = (1..=n_modes.max(1))
            .map(|n| (n as f64 * std::f64::consts::PI).powi(2))
            .collect();
        Self {
            eigenvalues,
            basis_label: "dirichlet-sine-(0,1)".into(),
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn basis_label(&self) -> &str {
        &self.basis_label
    }

    pub fn sqrt_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l.sqrt()).collect()
    }

    /// Spectral bound of `−A`, i.e. `−λ₁`.
    pub fn omega_s_neg(&self) -> f64 {
        -self.eigenvalues[0]
    }

    /// `‖A^{−1/2}‖ = 1/√λ₁`.
    pub fn inv_sqrt_norm(&self) -> f64 {
        1.0 / self.eigenvalues[0].sqrt()
    }
}

/// The damping operator `B` on the mode truncation.
#[derive(Debug, Clone, PartialEq)]
pub enum DampingSpec {
    /// `B = βI`.
    Scalar(f64),
    Diagonal(Vec<C64>),
    Dense(DMatrix<C64>),
}

impl DampingSpec {
    pub fn diagonal_real(values: &[f64]) -> Self {
        DampingSpec::Diagonal(values.iter().map(|&v| c(v)).collect())
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        let found = match self {
            DampingSpec::Scalar(_) => return Ok(()),
            DampingSpec::Diagonal(d) => d.len(),
            DampingSpec::Dense(m) => {
                if m.nrows() != m.ncols() {
                    return Err(Error::DimensionMismatch {
                        context: "damping matrix (rows vs columns)",
                        expected: m.nrows(),
                        found: m.ncols(),
                    });
                }
                m.nrows()
            }
        };
        if found != n {
            return Err(Error::DimensionMismatch {
                context: "damping vs number of modes",
                expected: n,
                found,
            });
        }
        Ok(())
    }

    /// Diagonal entries when `B` is scalar or diagonal.
    pub fn diagonal_entries(&self, n: usize) -> Option<Vec<C64>> {
        match self {
            DampingSpec::Scalar(b) => Some(vec![c(*b); n]),
            DampingSpec::Diagonal(d) => Some(d.clone()),
            DampingSpec::Dense(_) => None,
        }
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<C64> {
        match self.diagonal_entries(n) {
            Some(d) => DMatrix::from_diagonal(&DVector::from_vec(d)),
            None => match self {
                DampingSpec::Dense(m) => m.clone(),
                _ => unreachable!(),
            },
        }
    }

    pub fn is_real(&self) -> bool {
        match self {
            DampingSpec::Scalar(_) => true,
            DampingSpec::Diagonal(d) => d.iter().all(|x| x.im == 0.0),
            DampingSpec::Dense(m) => m.iter().all(|x| x.im == 0.0),
        }
    }

    /// `max Re⟨Bv,v⟩/‖v‖²`, the top eigenvalue of the Hermitian part.
    pub fn max_real_part(&self, n: usize) -> f64 {
        match self.diagonal_entries(n) {
            Some(d) => d.iter().map(|x| x.re).fold(f64::NEG_INFINITY, f64::max),
            None => linalg::max_hermitian_eig(&self.to_dense(n)),
        }
    }

    pub fn operator_norm(&self, n: usize) -> f64 {
        match self.diagonal_entries(n) {
            Some(d) => d.iter().map(|x| x.norm()).fold(0.0, f64::max),
            None => linalg::norm_dense(&self.to_dense(n)),
        }
    }

    pub fn is_dissipative(&self, n: usize) -> bool {
        self.max_real_part(n) <= 1e-12 * self.operator_norm(n).max(1.0)
    }

    /// Largest `α_B ≥ 0` with `Re⟨Bv,v⟩ ≤ −2α_B‖v‖²`.
    pub fn alpha(&self, n: usize) -> f64 {
        (-self.max_real_part(n) / 2.0).max(0.0)
    }

    /// Smallest sector constant `γ_B ≥ 0` with `γ_B·Re⟨Bv,v⟩ ≤ −|Im⟨Bv,v⟩|`,
    /// or `None` if no finite constant exists. Real scalar or diagonal `B`
    /// reports 0.
    pub fn gamma(&self, n: usize) -> Option<f64> {
        if let Some(d) = self.diagonal_entries(n) {
            let mut g: f64 = 0.0;
            for b in d {
                if b.im == 0.0 {
                    continue;
                }
                if b.re >= 0.0 {
                    return None;
                }
                g = g.max(b.im.abs() / -b.re);
            }
            return Some(g);
        }
        let b = self.to_dense(n);
        let scale = linalg::norm_dense(&b).max(f64::MIN_POSITIVE);
        let hr = (&b + b.adjoint()) * c(0.5);
        let hi = (&b - b.adjoint()) * C64::new(0.0, -0.5);
        let tol = 1e-12 * scale;
        let feasible = |g: f64| {
            let p = &hr * c(g) + &hi;
            let m = &hr * c(g) - &hi;
            linalg::max_hermitian_eig(&p) <= tol && linalg::max_hermitian_eig(&m) <= tol
        };
        if feasible(0.0) {
            return Some(0.0);
        }
        let mut hi_g = 1.0;
        while !feasible(hi_g) {
            hi_g *= 2.0;
            if hi_g > 1e12 {
                return None;
            }
        }
        let mut lo_g = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo_g + hi_g);
            if feasible(mid) {
                hi_g = mid;
            } else {
                lo_g = mid;
            }
            if hi_g - lo_g <= 1e-12 * hi_g {
                break;
            }
        }
        Some(hi_g)
    }

    /// `‖A^{−1/2}BA^{−1/2}‖` on the truncation.
    pub fn conjugate_norm(&self, a: &SpectralOperator) -> f64 {
        let lam = a.eigenvalues();
        match self.diagonal_entries(lam.len()) {
            Some(d) => d
                .iter()
                .zip(lam)
                .map(|(b, l)| b.norm() / l)
                .fold(0.0, f64::max),
            None => {
                let s: Vec<C64> = lam.iter().map(|l| c(1.0 / l.sqrt())).collect();
                let s = DMatrix::from_diagonal(&DVector::from_vec(s));
                linalg::norm_dense(&(&s * self.to_dense(lam.len()) * &s))
            }
        }
    }
}

/// Internal storage of the truncated `Λ₀`.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockRepr {
    /// Mode `n` block `[[0, √λ_n], [−√λ_n, b_n]]`.
    Diagonal(Vec<Matrix2<C64>>),
    /// Full `2N × 2N` matrix in `[z₁; z₂]` ordering.
    Dense(DMatrix<C64>),
}

/// Truncated generator `Λ₀` in `(A^{1/2}u, u')` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator {
    sqrt_lambda: Vec<f64>,
    repr: BlockRepr,
}

impl BlockOperator {
    /// Assembles `Λ₀` from `√λ_n` and `B` without validating positivity or
    /// dissipativity. [`build_reduction`] is the checked entry point.
    pub fn from_parts(sqrt_lambda: Vec<f64>, damping: &DampingSpec) -> Result<Self> {
        let n = sqrt_lambda.len();
        damping.check_dim(n)?;
        let repr = match damping.diagonal_entries(n) {
            Some(d) => BlockRepr::Diagonal(
                sqrt_lambda
                    .iter()
                    .zip(d)
                    .map(|(&s, b)| Matrix2::new(c(0.0), c(s), c(-s), b))
                    .collect(),
            ),
            None => {
                let b = damping.to_dense(n);
                let mut m = DMatrix::zeros(2 * n, 2 * n);
                for i in 0..n {
                    m[(i, n + i)] = c(sqrt_lambda[i]);
                    m[(n + i, i)] = c(-sqrt_lambda[i]);
                }
                m.view_mut((n, n), (n, n)).copy_from(&b);
                BlockRepr::Dense(m)
            }
        };
        Ok(Self { sqrt_lambda, repr })
    }

    pub fn repr(&self) -> &BlockRepr {
        &self.repr
    }

    pub fn n_modes(&self) -> usize {
        self.sqrt_lambda.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.sqrt_lambda.len()
    }

    pub fn sqrt_lambda(&self) -> &[f64] {
        &self.sqrt_lambda
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.repr, BlockRepr::Diagonal(_))
    }

    pub fn blocks(&self) -> Option<&[Matrix2<C64>]> {
        match &self.repr {
            BlockRepr::Diagonal(b) => Some(b),
            BlockRepr::Dense(_) => None,
        }
    }

    /// The damping block `B` as an `N × N` matrix.
    pub fn damping_matrix(&self) -> DMatrix<C64> {
        let n = self.n_modes();
        match &self.repr {
            BlockRepr::Diagonal(b) => {
                DMatrix::from_diagonal(&DVector::from_iterator(n, b.iter().map(|m| m[(1, 1)])))
            }
            BlockRepr::Dense(m) => m.view((n, n), (n, n)).into_owned(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match &self.repr {
            BlockRepr::Dense(m) => m.clone(),
            BlockRepr::Diagonal(blocks) => {
                let n = blocks.len();
                let mut m = DMatrix::zeros(2 * n, 2 * n);
                for (i, b) in blocks.iter().enumerate() {
                    let idx = [i, n + i];
                    for r in 0..2 {
                        for s in 0..2 {
                            m[(idx[r], idx[s])] = b[(r, s)];
                        }
                    }
                }
                m
            }
        }
    }

    /// Real form of `Λ₀` if every entry is real.
    pub fn to_real_dense(&self) -> Option<DMatrix<f64>> {
        let m = self.to_dense();
        if m.iter().any(|x| x.im != 0.0) {
            return None;
        }
        Some(m.map(|x| x.re))
    }

    pub fn apply(&self, y: &DVector<C64>) -> Result<DVector<C64>> {
        self.check_state(y.len())?;
        Ok(match &self.repr {
            BlockRepr::Dense(m) => m * y,
            BlockRepr::Diagonal(blocks) => map_blocks(blocks, y),
        })
    }

    /// `‖Λ₀‖`, the largest singular value.
    pub fn norm(&self) -> f64 {
        match &self.repr {
            BlockRepr::Diagonal(b) => b.iter().map(linalg::norm2).fold(0.0, f64::max),
            BlockRepr::Dense(m) => linalg::norm_dense(m),
        }
    }

    pub fn eigenvalues(&self) -> Vec<C64> {
        match &self.repr {
            BlockRepr::Diagonal(b) => b.iter().flat_map(linalg::eig2).collect(),
            BlockRepr::Dense(m) => linalg::eigenvalues_dense(m),
        }
    }

    /// Largest real part of the spectrum; on the truncation this is also the
    /// exact growth bound.
    pub fn spectral_abscissa(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `e^{tΛ₀}`: closed-form per block, scaling-and-squaring when dense.
    pub fn exp(&self, t: f64) -> Result<Propagator> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::NegativeTime(t));
        }
        Ok(match &self.repr {
            BlockRepr::Diagonal(b) => {
                Propagator::Diagonal(b.iter().map(|m| linalg::expm2(m, t)).collect())
            }
            BlockRepr::Dense(m) => Propagator::Dense((m * c(t)).exp()),
        })
    }

    pub(crate) fn check_state(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "state vector",
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }
}

fn map_blocks(blocks: &[Matrix2<C64>], y: &DVector<C64>) -> DVector<C64> {
    let n = blocks.len();
    let mut out = DVector::zeros(2 * n);
    for (i, b) in blocks.iter().enumerate() {
        let (p, q) = (y[i], y[n + i]);
        out[i] = b[(0, 0)] * p + b[(0, 1)] * q;
        out[n + i] = b[(1, 0)] * p + b[(1, 1)] * q;
    }
    out
}

/// A fixed-time semigroup operator `e^{tΛ₀}`.
#[derive(Debug, Clone, PartialEq)]
pub enum Propagator {
    Diagonal(Vec<Matrix2<C64>>),
    Dense(DMatrix<C64>),
}

impl Propagator {
    pub fn apply(&self, y: &DVector<C64>) -> DVector<C64> {
        match self {
            Propagator::Diagonal(b) => map_blocks(b, y),
            Propagator::Dense(m) => m * y,
        }
    }

    pub fn norm(&self) -> f64 {
        match self {
            Propagator::Diagonal(b) => b.iter().map(linalg::norm2).fold(0.0, f64::max),
            Propagator::Dense(m) => linalg::norm_dense(m),
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match self {
            Propagator::Dense(m) => m.clone(),
            Propagator::Diagonal(blocks) => {
                let n = blocks.len();
                let mut m = DMatrix::zeros(2 * n, 2 * n);
                for (i, b) in blocks.iter().enumerate() {
                    let idx = [i, n + i];
                    for r in 0..2 {
                        for s in 0..2 {
                            m[(idx[r], idx[s])] = b[(r, s)];
                        }
                    }
                }
                m
            }
        }
    }
}

/// Checked reduction of `u'' + Au = Bu'` to `y' = Λ₀y`.
pub fn build_reduction(a: &SpectralOperator, b: &DampingSpec) -> Result<BlockOperator> {
    let n = a.n_modes();
    b.check_dim(n)?;
    if !b.is_dissipative(n) {
        return Err(Error::NotDissipative {
            max_real_part: b.max_real_part(n),
        });
    }
    BlockOperator::from_parts(a.sqrt_eigenvalues(), b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub dissipative: bool,
    pub bounded_conjugate: bool,
    pub conjugate_norm: f64,
    /// `max Re⟨Bv,v⟩/‖v‖²` on the truncation.
    pub max_real_part: f64,
    /// Density of `A^{1/2}(D(B) ∩ D(A^{1/2}))` in `H` cannot be decided on a
    /// truncation; always `"assumed"`.
    pub density: &'static str,
}

/// Reports the contraction-generation hypotheses on the truncation.
pub fn check_generation_conditions(
    a: &SpectralOperator,
    b: &DampingSpec,
) -> Result<GenerationReport> {
    let n = a.n_modes();
    b.check_dim(n)?;
    let conjugate_norm = b.conjugate_norm(a);
    Ok(GenerationReport {
        dissipative: b.is_dissipative(n),
        bounded_conjugate: conjugate_norm.is_finite(),
        conjugate_norm,
        max_real_part: b.max_real_part(n),
        density: "assumed",
    })
}

/// Operator entries of `Λ₀^{−1} = [[U, V], [W, S]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseBlocks {
    /// `A^{−1/2}BA^{−1/2}`
    pub u: DMatrix<C64>,
    /// `−A^{−1/2}`
    pub v: DMatrix<C64>,
    /// `A^{−1/2}`
    pub w: DMatrix<C64>,
    /// `0`
    pub s: DMatrix<C64>,
}

impl InverseBlocks {
    pub fn assemble(&self) -> DMatrix<C64> {
        let n = self.u.nrows();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.u);
        m.view_mut((0, n), (n, n)).copy_from(&self.v);
        m.view_mut((n, 0), (n, n)).copy_from(&self.w);
        m.view_mut((n, n), (n, n)).copy_from(&self.s);
        m
    }
}

pub fn inverse_block(op: &BlockOperator) -> Result<InverseBlocks> {
    let n = op.n_modes();
    if op.sqrt_lambda.iter().any(|&s| !(s.abs() > 1e-150)) {
        return Err(Error::Singular { what: "block operator (zero stiffness eigenvalue)" });
    }
    let inv_sqrt = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        op.sqrt_lambda.iter().map(|&s| c(1.0 / s)),
    ));
    let b = op.damping_matrix();
    Ok(InverseBlocks {
        u: &inv_sqrt * b * &inv_sqrt,
        v: -inv_sqrt.clone(),
        w: inv_sqrt,
        s: DMatrix::zeros(n, n),
    })
}

/// `‖Λ₀^{−1}‖`.
pub fn inverse_norm(op: &BlockOperator) -> Result<f64> {
    match op.blocks() {
        Some(blocks) => {
            let mut best: f64 = 0.0;
            for (b, &s) in blocks.iter().zip(&op.sqrt_lambda) {
                if !(s.abs() > 1e-150) {
                    return Err(Error::Singular { what: "block operator (zero stiffness eigenvalue)" });
                }
                let inv = Matrix2::new(b[(1, 1)] / (s * s), c(-1.0 / s), c(1.0 / s), c(0.0));
                best = best.max(linalg::norm2(&inv));
            }
            Ok(best)
        }
        None => Ok(linalg::norm_dense(&inverse_block(op)?.assemble())),
    }
}

/// `e^{tΛ₀}y₀`.
pub fn apply_semigroup(op: &BlockOperator, y0: &DVector<C64>, t: f64) -> Result<DVector<C64>> {
    op.check_state(y0.len())?;
    Ok(op.exp(t)?.apply(y0))
}

/// Converts physical mode coefficients `(u_n, u'_n)` to `[A^{1/2}u; u']`.
pub fn to_energy_coordinates(a: &SpectralOperator, u: &[f64], v: &[f64]) -> Result<DVector<f64>> {
    let n = a.n_modes();
    if u.len() != n || v.len() != n {
        return Err(Error::DimensionMismatch {
            context: "mode coefficients",
            expected: n,
            found: u.len().max(v.len()),
        });
    }
    let mut y = DVector::zeros(2 * n);
    for i in 0..n {
        y[i] = a.eigenvalues()[i].sqrt() * u[i];
        y[n + i] = v[i];
    }
    Ok(y)
}
