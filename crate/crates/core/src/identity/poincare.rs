//! The weighted Poincaré inequality fails when `∇log p` is bounded: bumps
//! of growing radius, reweighted by `p^{-1/q}`, have a norm-to-gradient
//! ratio that keeps growing.

use crate::error::{FpfError, Result};
use crate::fields::LogDensity;
use crate::scalar::{count, lit, Scalar};

/// Standard bump `exp(-1/(1 - |y|²))` on the unit ball and its gradient.
fn bump<T: Scalar>(y: &[T]) -> (T, Vec<T>) {
    let r2: T = y.iter().map(|&a| a * a).sum();
    if r2 >= T::one() {
        return (T::zero(), vec![T::zero(); y.len()]);
    }
    let s = T::one() - r2;
    let g = (-T::one() / s).exp();
    let c = -(g + g) / (s * s);
    (g, y.iter().map(|&a| c * a).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareRow<T> {
    pub radius: T,
    /// `‖u‖` in `L^q(p)`.
    pub norm_u: T,
    /// `‖∇u‖` in `L^q(p)`.
    pub norm_grad: T,
    pub ratio: T,
}

/// `u(x) = γ((x - c)/r) p(x)^{-1/q}` for each center/radius pair, with both
/// weighted `L^q` norms by the tensor midpoint rule on `[c - r, c + r]^d`
/// using `nodes` points per axis.
///
/// Balls pushed out into the tail, where `∇log p` is nearly constant, show
/// the clean growth; a ball straddling a sign change of `∇log p` does not.
///
/// The weight cancels in `|u|^q p = γ^q` and in
/// `|∇u|^q p = |∇γ/r - γ ∇log p / q|^q`, so `p` may be unnormalized.
pub fn poincare_counterexample<T: Scalar>(
    q: u32,
    p: &dyn LogDensity<T>,
    centers: &[Vec<T>],
    radii: &[T],
    eps: T,
    nodes: usize,
) -> Result<Vec<PoincareRow<T>>> {
    let d = p.dim();
    if q == 0 || nodes == 0 || centers.len() != radii.len() || centers.iter().any(|c| c.len() != d) {
        return Err(FpfError::InvalidArgument("need q ≥ 1, nodes ≥ 1 and one center of matching dimension per radius".into()));
    }
    let qf = count::<T>(q as usize);
    let bound = qf * (T::one() - eps);
    let total = nodes.checked_pow(d as u32).ok_or_else(|| FpfError::InvalidArgument("grid too large".into()))?;
    let mut rows = Vec::with_capacity(radii.len());
    for (center, &r) in centers.iter().zip(radii) {
        let h = (r + r) / count(nodes);
        let mut iu = T::zero();
        let mut ig = T::zero();
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let y: Vec<T> = idx.iter().map(|&i| -T::one() + (count::<T>(i) + lit(0.5)) * h / r).collect();
            let x: Vec<T> = center.iter().zip(&y).map(|(&c, &yy)| c + r * yy).collect();
            let g = p.grad_log(&x);
            if g.iter().map(|&a| a * a).sum::<T>().sqrt() > bound {
                return Err(FpfError::HypothesisViolated);
            }
            let (b, db) = bump(&y);
            if b > T::zero() {
                iu += b.powi(q as i32);
                let n2: T = (0..d).map(|k| {
                    let c = db[k] / r - b * g[k] / qf;
                    c * c
                }).sum();
                ig += n2.sqrt().powi(q as i32);
            }
            for i in idx.iter_mut() {
                *i += 1;
                if *i < nodes {
                    break;
                }
                *i = 0;
            }
        }
        let vol = h.powi(d as i32);
        let norm_u = (iu * vol).powf(T::one() / qf);
        let norm_grad = (ig * vol).powf(T::one() / qf);
        rows.push(PoincareRow { radius: r, norm_u, norm_grad, ratio: norm_u / norm_grad });
    }
    Ok(rows)
}
