//! Small dense helpers shared by the analysis modules.

use nalgebra::{DMatrix, Matrix2, Schur, SymmetricEigen};

use crate::C64;

pub(crate) fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// `e^{tM}` for a complex 2×2 matrix.
///
/// Writes `M = mI + K` with `K` traceless, so `K² = disc·I` and
/// `e^{tM} = e^{tm}(cosh(ts)·I + sinh(ts)/s·K)`, `s² = disc`. Both scalar
/// factors are entire in `z = t²·disc`; small `|z|` (which contains the
/// double-root case) is summed as a power series, otherwise the two exponents
/// `t(m ± s)` are combined before exponentiating so that strongly damped
/// blocks cannot overflow.
pub(crate) fn expm2(m: &Matrix2<C64>, t: f64) -> Matrix2<C64> {
    let half_tr = (m[(0, 0)] + m[(1, 1)]) * 0.5;
    let k = m - Matrix2::from_diagonal_element(half_tr);
    let disc = k[(0, 0)] * k[(0, 0)] + k[(0, 1)] * k[(1, 0)];
    let z = disc * (t * t);

    let (ch, sh) = if z.norm() <= 1.0 {
        // cosh(ts) = Σ z^j/(2j)!,  sinh(ts)/s = t Σ z^j/(2j+1)!
        let mut ch = c(1.0);
        let mut sh = c(1.0);
        let mut term_c = c(1.0);
        let mut term_s = c(1.0);
        for j in 1..24 {
            let jj = j as f64;
            term_c = term_c * z / ((2.0 * jj - 1.0) * (2.0 * jj));
            term_s = term_s * z / ((2.0 * jj) * (2.0 * jj + 1.0));
            ch += term_c;
            sh += term_s;
        }
        let e = (half_tr * t).exp();
        (e * ch, e * sh * t)
    } else {
        let s = disc.sqrt();
        let ep = ((half_tr + s) * t).exp();
        let em = ((half_tr - s) * t).exp();
        ((ep + em) * 0.5, (ep - em) / (s * 2.0))
    };
    Matrix2::from_diagonal_element(ch) + k * sh
}

/// Largest singular value of a complex 2×2 matrix in closed form.
pub(crate) fn norm2(m: &Matrix2<C64>) -> f64 {
    let f = m.iter().map(|x| x.norm_sqr()).sum::<f64>();
    let det = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).norm();
    let inner = (f * f - 4.0 * det * det).max(0.0);
    ((f + inner.sqrt()) * 0.5).sqrt()
}

pub(crate) fn inv2(m: &Matrix2<C64>) -> Option<Matrix2<C64>> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let scale = m.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if det.norm() <= 1e-300 || det.norm() <= 1e-15 * scale * scale {
        return None;
    }
    Some(Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}

pub(crate) fn eig2(m: &Matrix2<C64>) -> [C64; 2] {
    let half_tr = (m[(0, 0)] + m[(1, 1)]) * 0.5;
    let p = (m[(0, 0)] - m[(1, 1)]) * 0.5;
    let s = (p * p + m[(0, 1)] * m[(1, 0)]).sqrt();
    [half_tr + s, half_tr - s]
}

/// Spectral norm of a dense complex matrix.
pub(crate) fn norm_dense(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub(crate) fn norm_dense_real(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Largest eigenvalue of the Hermitian part `(H + H*)/2`.
pub(crate) fn max_hermitian_eig(h: &DMatrix<C64>) -> f64 {
    if h.is_empty() {
        return f64::NEG_INFINITY;
    }
    let herm = (h + h.adjoint()) * c(0.5);
    SymmetricEigen::new(herm)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// All eigenvalues of a dense complex matrix via a Schur decomposition.
pub(crate) fn eigenvalues_dense(m: &DMatrix<C64>) -> Vec<C64> {
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    let (_, t) = Schur::new(m.clone()).unpack();
    let scale = t.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1.0);
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].norm() > 1e-14 * scale {
            let blk = Matrix2::new(t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            out.extend_from_slice(&eig2(&blk));
            i += 2;
        } else {
            out.push(t[(i, i)]);
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_exp(m: &Matrix2<C64>, t: f64) -> Matrix2<C64> {
        // Taylor with scaling and squaring, independent of the closed form.
        let mut k = 0;
        let mut scaled = m * c(t);
        while norm2(&scaled) > 0.25 {
            scaled /= c(2.0);
            k += 1;
        }
        let mut acc = Matrix2::identity();
        let mut term = Matrix2::identity();
        for j in 1..30 {
            term = term * scaled / c(j as f64);
            acc += term;
        }
        for _ in 0..k {
            acc = acc * acc;
        }
        acc
    }

    #[test]
    fn expm2_matches_taylor_on_all_branches() {
        let cases = [
            Matrix2::new(c(0.0), c(3.0), c(-3.0), c(-2.0)),
            Matrix2::new(c(0.0), c(1.0), c(-1.0), c(-2.0)),
            Matrix2::new(c(0.0), c(1.0), c(-0.25), c(-3.0)),
            Matrix2::new(c(0.0), c(0.0), c(0.0), c(0.0)),
            Matrix2::new(c(1.0), c(1.0), c(0.0), c(1.0)),
            Matrix2::new(C64::new(0.3, 1.0), c(2.0), C64::new(-1.0, 0.5), c(-1.0)),
        ];
        for m in &cases {
            for &t in &[0.0, 0.1, 1.0, 3.7] {
                let a = expm2(m, t);
                let b = brute_exp(m, t);
                let err = norm2(&(a - b));
                assert!(err <= 1e-11 * (1.0 + norm2(&b)), "{m} t={t} err={err}");
            }
        }
    }

    #[test]
    fn expm2_strong_damping_does_not_overflow() {
        let m = Matrix2::new(c(0.0), c(1.0), c(-1.0), c(-1e4));
        let e = expm2(&m, 1e3);
        assert!(e.iter().all(|x| x.re.is_finite() && x.im.is_finite()));
        assert!(norm2(&e) < 1.0);
    }

    #[test]
    fn norm2_matches_svd() {
        let m = Matrix2::new(c(1.0), C64::new(2.0, -1.0), c(-0.5), C64::new(0.0, 3.0));
        let d = DMatrix::from_iterator(2, 2, m.iter().cloned());
        assert!((norm2(&m) - norm_dense(&d)).abs() < 1e-12);
    }

    #[test]
    fn dense_eigenvalues_of_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[c(0.0), c(2.0), c(-2.0), c(-1.0)]);
        let mut ev = eigenvalues_dense(&m);
        ev.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        let exact = eig2(&Matrix2::new(c(0.0), c(2.0), c(-2.0), c(-1.0)));
        for e in exact {
            assert!(ev.iter().any(|x| (x - e).norm() < 1e-10));
        }
    }
}
