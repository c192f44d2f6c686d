//! Stationarity of the f-divergence between the pushed-forward prior and the
//! Bayes posterior, and its independence of the generator `f`.
//!
//! Write `s = x + v(x)` and `A = I + ∇vᵀ`. With the Gaussian likelihood
//! `ℓ(s) = p(y | s)` of variance `1/dt`, the density ratio is
//! `ξ(x) = p(s) ℓ(s) |A| / (p(x) p_Y)`.

use super::{cofactor, deformation};
use crate::divergence::FGenerator;
use crate::error::{FpfError, Result};
use crate::fields::{LogDensity, ScalarField, VectorField};
use crate::scalar::{lit, Scalar};

/// A prior and a candidate displacement, tested against one observation `y`
/// (so that `dz = y·dt`).
pub struct ElProblem<'a, T> {
    pub p: &'a dyn LogDensity<T>,
    pub h: &'a dyn ScalarField<T>,
    pub v: &'a dyn VectorField<T>,
    pub y: T,
    pub dt: T,
    /// Evidence `p_Y(y)`; only rescales `ξ`.
    pub p_y: T,
}

impl<T: Scalar> ElProblem<'_, T> {
    fn likelihood(&self, s: &[T]) -> T {
        let r = self.y - self.h.value(s);
        (self.dt / (T::PI() + T::PI())).sqrt() * (-r * r * self.dt * lit(0.5)).exp()
    }

    fn displaced(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(self.v.value(x)).map(|(&a, b)| a + b).collect()
    }

    /// Density ratio `ξ(x)`.
    pub fn xi(&self, x: &[T]) -> Result<T> {
        let s = self.displaced(x);
        let det = deformation(self.v, x).determinant();
        let xi = self.p.density(&s) * self.likelihood(&s) * det / (self.p.density(x) * self.p_y);
        if !(xi > T::zero()) {
            return Err(FpfError::DensityRatioNonpositive);
        }
        Ok(xi)
    }
}

/// The generator-free brace:
/// `∇ₓ[p(s)ℓ(s)] p(x) + p(s)ℓ(s) [tr(A⁻¹ ∂_i A)]_i p(x) - p(s)ℓ(s) ∇p(x)`.
pub fn el_bracket_residual<T: Scalar>(prob: &ElProblem<'_, T>, x: &[T]) -> Result<Vec<T>> {
    let d = x.len();
    let a = deformation(prob.v, x);
    let a_inv = a
        .inverse()
        .filter(|_| a.determinant().abs() > lit(1e-12))
        .ok_or_else(|| FpfError::Singular(format!("I + ∇vᵀ singular at {x:?}")))?;
    let s = prob.displaced(x);
    let joint = prob.p.density(&s) * prob.likelihood(&s);
    let innov = (prob.y - prob.h.value(&s)) * prob.dt;
    let gl = prob.p.grad_log(&s);
    let gh = prob.h.gradient(&s);
    let grad_s: Vec<T> = (0..d).map(|j| joint * (gl[j] + innov * gh[j])).collect();
    let second = prob.v.second(x);
    let px = prob.p.density(x);
    let gpx = prob.p.grad_density(x);
    let out = (0..d)
        .map(|i| {
            // chain rule through s = x + v(x)
            let total: T = (0..d).map(|j| a[(i, j)] * grad_s[j]).sum();
            let mut tr = T::zero();
            for al in 0..d {
                for b in 0..d {
                    tr += a_inv[(b, al)] * second[(b * d + al) * d + i];
                }
            }
            total * px + joint * tr * px - joint * gpx[i]
        })
        .collect();
    Ok(out)
}

/// Five-point Gauss–Legendre rule on `[a, b]`.
fn gauss_legendre<T: Scalar>(f: impl Fn(T) -> T, a: T, b: T) -> T {
    let s70 = lit::<T>(70.0).sqrt();
    let r = lit::<T>(10.0 / 7.0).sqrt();
    let third = lit::<T>(1.0 / 3.0);
    let n1 = third * (lit::<T>(5.0) - r - r).sqrt();
    let n2 = third * (lit::<T>(5.0) + r + r).sqrt();
    let w0 = lit::<T>(128.0 / 225.0);
    let w1 = (lit::<T>(322.0) + lit::<T>(13.0) * s70) / lit(900.0);
    let w2 = (lit::<T>(322.0) - lit::<T>(13.0) * s70) / lit(900.0);
    let half = lit::<T>(0.5);
    let (c, m) = ((a + b) * half, (b - a) * half);
    let nodes = [(T::zero(), w0), (n1, w1), (-n1, w1), (n2, w2), (-n2, w2)];
    nodes.iter().map(|&(t, w)| w * f(c + m * t)).sum::<T>() * m
}

#[derive(Debug, Clone)]
pub struct GeneratorResidual<T> {
    pub generator: FGenerator,
    /// `∇ₓᵀ[f′(ξ)] |A| A^{-T}`.
    pub residual: Vec<T>,
    pub f_second: T,
    /// `residual / f″(ξ)`, the generator-free part.
    pub normalized: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ElInvariance<T> {
    pub xi: T,
    pub bracket: Vec<T>,
    /// `|A| / (p_Y p(x)²) · bracket · |A| A^{-T}`, the factorized prediction of
    /// every normalized residual.
    pub predicted: Vec<T>,
    pub per_generator: Vec<GeneratorResidual<T>>,
}

/// Full E-L residual for each generator. `∇f′(ξ)` is differenced directly:
/// `f′(ξ(x+h)) - f′(ξ(x-h))` is integrated from `f″` to avoid cancellation,
/// then one Richardson step removes the `h²` term.
pub fn el_f_invariance<T: Scalar>(
    prob: &ElProblem<'_, T>,
    generators: &[FGenerator],
    x: &[T],
    fd_step: T,
) -> Result<ElInvariance<T>> {
    let d = x.len();
    let xi0 = prob.xi(x)?;
    let bracket = el_bracket_residual(prob, x)?;
    let a = deformation(prob.v, x);
    let det = a.determinant();
    let cof = cofactor(&a);
    let px = prob.p.density(x);
    let scale = det / (prob.p_y * px * px);
    let row_times_cof = |g: &[T]| -> Vec<T> { (0..d).map(|j| (0..d).map(|i| g[i] * cof[(i, j)]).sum()).collect() };
    let predicted = row_times_cof(&bracket.iter().map(|&b| b * scale).collect::<Vec<_>>());

    let mut per_generator = Vec::with_capacity(generators.len());
    for &g in generators {
        let diff = |k: usize, h: T| -> Result<T> {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let (lo, hi) = (prob.xi(&xm)?, prob.xi(&xp)?);
            Ok(gauss_legendre(|s| g.f_second(s), lo, hi) / (h + h))
        };
        let mut grad = Vec::with_capacity(d);
        for k in 0..d {
            let coarse = diff(k, fd_step)?;
            let fine = diff(k, fd_step * lit(0.5))?;
            grad.push((lit::<T>(4.0) * fine - coarse) / lit(3.0));
        }
        let residual = row_times_cof(&grad);
        let f2 = g.f_second(xi0);
        let normalized = residual.iter().map(|&r| r / f2).collect();
        per_generator.push(GeneratorResidual { generator: g, residual, f_second: f2, normalized });
    }
    Ok(ElInvariance { xi: xi0, bracket, predicted, per_generator })
}

/// Largest pairwise relative disagreement among normalized residuals.
pub fn invariance_gap<T: Scalar>(inv: &ElInvariance<T>) -> T {
    let mut worst = T::zero();
    let rows = &inv.per_generator;
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            let (u, w) = (&rows[a].normalized, &rows[b].normalized);
            let num = u.iter().zip(w).fold(T::zero(), |m, (&p, &q)| m.max((p - q).abs()));
            let den = u.iter().chain(w).fold(T::zero(), |m, &p| m.max(p.abs()));
            if den > T::zero() {
                worst = worst.max(num / den);
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GaussianDensity;
    use crate::identity::{max_abs, probes};
    use crate::poly::{PolyField, Polynomial};
    use rand::SeedableRng;

    fn exact_v(dz: f64, dt: f64) -> PolyField<f64> {
        // K = 1, u = -x/2
        PolyField::new(vec![Polynomial::univariate(&[dz, -0.5 * dt])])
    }

    #[test]
    fn no_information_no_motion() {
        let p = GaussianDensity::<f64>::standard(2);
        let h = Polynomial::zero(2);
        let v = PolyField::constant(&[0.0, 0.0]);
        let prob = ElProblem { p: &p, h: &h, v: &v, y: 0.7, dt: 0.01, p_y: 1.0 };
        let b = el_bracket_residual(&prob, &[0.3, -0.4]).unwrap();
        assert!(max_abs(&b) < 1e-16, "{b:?}");
    }

    #[test]
    fn exact_linear_control_is_nearly_stationary() {
        let p = GaussianDensity::<f64>::standard(1);
        let h = Polynomial::univariate(&[0.0, 1.0]);
        let norm = |dt: f64| {
            let v = exact_v(dt, dt);
            let prob = ElProblem { p: &p, h: &h, v: &v, y: 1.0, dt, p_y: 1.0 };
            (el_bracket_residual(&prob, &[0.4]).unwrap()[0] / prob.likelihood(&[0.4])).abs()
        };
        let (a, b) = (norm(0.01), norm(0.005));
        assert!(a <= 1e-3, "{a}");
        assert!(b * 3.0 <= a, "{a} {b}");
    }

    #[test]
    fn overshooting_grows_the_bracket() {
        let p = GaussianDensity::<f64>::standard(1);
        let h = Polynomial::univariate(&[0.0, 1.0]);
        let v1 = exact_v(0.01, 0.01);
        let v2 = PolyField::new(vec![Polynomial::univariate(&[0.02, -0.01])]);
        let b = |v: &PolyField<f64>| {
            let prob = ElProblem { p: &p, h: &h, v, y: 1.0, dt: 0.01, p_y: 1.0 };
            el_bracket_residual(&prob, &[0.4]).unwrap()[0].abs()
        };
        assert!(b(&v2) > b(&v1));
    }

    #[test]
    fn generators_agree_after_normalization() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let p = probes::random_gaussian::<f64, _>(2, &mut rng);
            let h = probes::random_polynomial(2, 2, 0.5, &mut rng);
            let v = probes::random_poly_field(2, 2, 0.05, &mut rng);
            let x = probes::random_point(2, 1.0, &mut rng);
            let prob = ElProblem { p: &p, h: &h, v: &v, y: 0.3, dt: 0.05, p_y: 1.0 };
            let inv = el_f_invariance(&prob, &FGenerator::ALL, &x, 1e-3).unwrap();
            assert!(invariance_gap(&inv) <= 1e-6, "{}", invariance_gap(&inv));
            let kl = &inv.per_generator[0];
            assert!((kl.f_second - 1.0 / inv.xi).abs() < 1e-15);
            let gap = kl.normalized.iter().zip(&inv.predicted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap <= 1e-6 * max_abs(&inv.predicted), "{gap}");
        }
    }

    #[test]
    fn nonpositive_ratio_rejected() {
        let p = GaussianDensity::<f64>::standard(1);
        let h = Polynomial::zero(1);
        // |A| = -1
        let v = PolyField::new(vec![Polynomial::univariate(&[0.0, -2.0])]);
        let prob = ElProblem { p: &p, h: &h, v: &v, y: 0.0, dt: 0.01, p_y: 1.0 };
        assert_eq!(prob.xi(&[0.1]).unwrap_err(), FpfError::DensityRatioNonpositive);
    }

    #[test]
    fn gauss_legendre_is_exact_for_degree_nine() {
        let v = gauss_legendre(|s: f64| s.powi(9), 0.0, 2.0);
        assert!((v - 102.4).abs() < 1e-12, "{v}");
    }
}
