//! Base case of the derivative recursion for the 1-D gain equation: if
//! `-(pφ′)′ = (h - ĥ)p` then `-(pφ″)′ = [(log p)″ φ′ + h′] p`.

use crate::error::{FpfError, Result};
use crate::fields::{LogDensity, ScalarField};
use crate::grid::trapezoid;
use crate::scalar::{count, lit, Scalar};

#[derive(Debug, Clone)]
pub struct LemmaDReport<T> {
    pub xs: Vec<T>,
    pub phi: Vec<T>,
    /// Central-difference `φ′` at interior nodes, zero at the ends.
    pub dphi: Vec<T>,
    /// Max residual of the differentiated equation over nodes `2..n-2`.
    pub residual: T,
    /// Same with the sign of the right-hand side flipped, for reference.
    pub flipped_residual: T,
}

/// Thomas algorithm for `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]`.
fn solve_tridiagonal<T: Scalar>(sub: &[T], diag: &[T], sup: &[T], rhs: &[T]) -> Result<Vec<T>> {
    let n = diag.len();
    let mut c = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    let tiny = lit::<T>(1e-300);
    for i in 0..n {
        let denom = if i == 0 { diag[0] } else { diag[i] - sub[i] * c[i - 1] };
        if denom.abs() < tiny || !denom.is_finite() {
            return Err(FpfError::Singular("tridiagonal system singular".into()));
        }
        c[i] = sup[i] / denom;
        d[i] = if i == 0 { rhs[0] / denom } else { (rhs[i] - sub[i] * d[i - 1]) / denom };
    }
    for i in (0..n - 1).rev() {
        let next = d[i + 1];
        d[i] -= c[i] * next;
    }
    Ok(d)
}

fn nodes<T: Scalar>(lo: T, hi: T, n: usize) -> (Vec<T>, T) {
    let dx = (hi - lo) / count(n - 1);
    ((0..n).map(|i| lo + count::<T>(i) * dx).collect(), dx)
}

/// Weighted mean of `h`, centered on the middle node first so a constant
/// `h` comes back bit-exact.
fn h_mean<T: Scalar>(p: &[T], h: &[T], dx: T) -> T {
    let h0 = h[h.len() / 2];
    h0 + trapezoid(dx, p.iter().zip(h).map(|(&a, &b)| a * (b - h0))) / trapezoid(dx, p.iter().copied())
}

/// Solves the Dirichlet problem on `n` nodes over `[lo, hi]`, then checks the
/// differentiated equation by central differences.
pub fn lemma_d_base_check<T: Scalar>(
    p: &dyn LogDensity<T>,
    h: &dyn ScalarField<T>,
    lo: T,
    hi: T,
    n: usize,
) -> Result<LemmaDReport<T>> {
    if p.dim() != 1 || h.dim() != 1 {
        return Err(FpfError::InvalidArgument("base case is one-dimensional".into()));
    }
    if n < 7 || !(hi > lo) {
        return Err(FpfError::InvalidArgument("need at least 7 nodes and hi > lo".into()));
    }
    let (xs, dx) = nodes(lo, hi, n);
    let half = lit::<T>(0.5);
    let pv: Vec<T> = xs.iter().map(|&x| p.density(&[x])).collect();
    let hv: Vec<T> = xs.iter().map(|&x| h.value(&[x])).collect();
    let hhat = h_mean(&pv, &hv, dx);
    let mid: Vec<T> = (0..n - 1).map(|i| p.density(&[xs[i] + half * dx])).collect();

    let m = n - 2;
    let dx2 = dx * dx;
    let mut sub = vec![T::zero(); m];
    let mut diag = vec![T::zero(); m];
    let mut sup = vec![T::zero(); m];
    let mut rhs = vec![T::zero(); m];
    for k in 0..m {
        let i = k + 1;
        sub[k] = -mid[i - 1] / dx2;
        sup[k] = -mid[i] / dx2;
        diag[k] = (mid[i - 1] + mid[i]) / dx2;
        rhs[k] = (hv[i] - hhat) * pv[i];
    }
    let inner = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
    let mut phi = vec![T::zero(); n];
    phi[1..n - 1].copy_from_slice(&inner);

    let two = lit::<T>(2.0);
    let mut dphi = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    for i in 1..n - 1 {
        dphi[i] = (phi[i + 1] - phi[i - 1]) / (two * dx);
        q[i] = pv[i] * (phi[i + 1] - two * phi[i] + phi[i - 1]) / dx2;
    }
    let mut residual = T::zero();
    let mut flipped = T::zero();
    for i in 2..n - 2 {
        let lhs = -(q[i + 1] - q[i - 1]) / (two * dx);
        let x = [xs[i]];
        let g1 = p.hess_log(&x)[(0, 0)] * dphi[i] + h.gradient(&x)[0];
        residual = residual.max((lhs - g1 * pv[i]).abs());
        flipped = flipped.max((lhs + g1 * pv[i]).abs());
    }
    Ok(LemmaDReport { xs, phi, dphi, residual, flipped_residual: flipped })
}

/// `K(x) = (1/p(x)) ∫_x^hi (h - ĥ) p` by cumulative trapezoid, the 1-D gain.
pub fn gain_oracle_1d<T: Scalar>(p: &dyn LogDensity<T>, h: &dyn ScalarField<T>, lo: T, hi: T, n: usize) -> (Vec<T>, Vec<T>) {
    let (xs, dx) = nodes(lo, hi, n);
    let pv: Vec<T> = xs.iter().map(|&x| p.density(&[x])).collect();
    let hv: Vec<T> = xs.iter().map(|&x| h.value(&[x])).collect();
    let hhat = h_mean(&pv, &hv, dx);
    let f: Vec<T> = pv.iter().zip(&hv).map(|(&a, &b)| (b - hhat) * a).collect();
    let mut tail = vec![T::zero(); n];
    for i in (0..n - 1).rev() {
        tail[i] = tail[i + 1] + (f[i] + f[i + 1]) * dx * lit(0.5);
    }
    let k = tail.iter().zip(&pv).map(|(&t, &a)| t / a).collect();
    (xs, k)
}
