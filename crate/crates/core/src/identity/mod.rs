//! Numerical checks of the identities behind the filter equations.
//!
//! Every check evaluates both sides independently (analytic derivatives where
//! available, central differences otherwise) and reports the gap.

pub mod appendix_b;
pub mod el;
pub mod lemma_d;
pub mod piola;
pub mod poincare;
pub mod probes;
pub mod suites;
pub mod taylor;

use crate::fields::VectorField;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub use suites::{run_suite, CheckRow, SUITES};

/// `I + ∇vᵀ` with `(i, j) = δ_ij + ∂v_j/∂x_i`.
pub fn deformation<T: Scalar>(v: &dyn VectorField<T>, x: &[T]) -> Matrix<T> {
    let d = x.len();
    let mut a = v.jacobian_t(x);
    for i in 0..d {
        a[(i, i)] += T::one();
    }
    a
}

/// Cofactor matrix `C_ij = (-1)^{i+j} M_ij`, which equals `|A| A^{-T}`.
pub fn cofactor<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    let d = a.rows();
    if d == 1 {
        return Matrix::identity(1);
    }
    Matrix::from_fn(d, d, |i, j| {
        let m = a.minor(i, j);
        if (i + j) % 2 == 0 { m } else { -m }
    })
}

/// Central difference of a scalar function along coordinate `k`.
pub(crate) fn central<T: Scalar>(f: &dyn Fn(&[T]) -> T, x: &[T], k: usize, h: T) -> T {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[k] += h;
    xm[k] -= h;
    (f(&xp) - f(&xm)) / (h + h)
}

/// Central-difference gradient.
pub(crate) fn fd_gradient<T: Scalar>(f: &dyn Fn(&[T]) -> T, x: &[T], h: T) -> Vec<T> {
    (0..x.len()).map(|k| central(f, x, k, h)).collect()
}

pub(crate) fn max_abs<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, a| m.max(a.abs()))
}

/// Truncation-order check: halving the step must cut the gap by at least
/// `factor`, unless both gaps already sit at the roundoff `floor`.
pub fn converges(gap: f64, gap_half: f64, factor: f64, floor: f64) -> bool {
    gap_half <= floor || gap_half * factor <= gap
}
