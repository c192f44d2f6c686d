//! Residuals of the `O(Δz)` and `O(Δt)` equations obtained by expanding the
//! stationarity condition, evaluated term by term with analytic derivatives.
//!
//! Notation: `D[(i, j)] = ∂_i K_j`, second derivatives of a field use the
//! `[(l*d + i)*d + j] = ∂_i∂_j K_l` layout of [`VectorField::second`].

use crate::fields::{LogDensity, ScalarField, VectorField};
use crate::scalar::{lit, Scalar};

/// Sum of the five `O(Δz)` terms, component `r`:
/// `pΣ_i K_i ∂_i∂_r p + pΣ_j ∂_j p ∂_r K_j + p² ∂_r h + p² ∂_r(∇ᵀK) - (∇pᵀK) ∂_r p`.
pub fn oz_equation_residual<T: Scalar>(
    p: &dyn LogDensity<T>,
    k: &dyn VectorField<T>,
    h: &dyn ScalarField<T>,
    x: &[T],
) -> Vec<T> {
    let d = x.len();
    let pv = p.density(x);
    let gp = p.grad_density(x);
    let hp = p.hess_density(x);
    let kv = k.value(x);
    let dk = k.jacobian_t(x);
    let gdiv = k.divergence_gradient(x);
    let gh = h.gradient(x);
    let gpk: T = (0..d).map(|i| gp[i] * kv[i]).sum();
    (0..d)
        .map(|r| {
            let t1: T = (0..d).map(|i| kv[i] * hp[(i, r)]).sum::<T>() * pv;
            let t2: T = (0..d).map(|j| gp[j] * dk[(r, j)]).sum::<T>() * pv;
            let t3 = pv * pv * gh[r];
            let t4 = pv * pv * gdiv[r];
            let t5 = -gpk * gp[r];
            t1 + t2 + t3 + t4 + t5
        })
        .collect()
}

/// The twelve `O(Δt)` terms, component by component: `terms[r][n]` is term
/// `n + 1` of component `r`.
pub fn ot_equation_terms<T: Scalar>(
    p: &dyn LogDensity<T>,
    k: &dyn VectorField<T>,
    u: &dyn VectorField<T>,
    h: &dyn ScalarField<T>,
    x: &[T],
) -> Vec<[T; 12]> {
    let d = x.len();
    let half = lit::<T>(0.5);
    let pv = p.density(x);
    let gp = p.grad_density(x);
    let hp = p.hess_density(x);
    let tp = p.third_density(x);
    let kv = k.value(x);
    let dk = k.jacobian_t(x);
    let sk = k.second(x);
    let uv = u.value(x);
    let du = u.jacobian_t(x);
    let gdiv_u = u.divergence_gradient(x);
    let gdiv_k = k.divergence_gradient(x);
    let hv = h.value(x);
    let gh = h.gradient(x);
    let hh = h.hessian(x);
    let gpk: T = (0..d).map(|i| gp[i] * kv[i]).sum();
    let gpu: T = (0..d).map(|i| gp[i] * uv[i]).sum();
    let khk: T = (0..d)
        .map(|i| (0..d).map(|j| kv[i] * hp[(i, j)] * kv[j]).sum::<T>())
        .sum();
    (0..d)
        .map(|r| {
            let mut t = [T::zero(); 12];
            t[0] = pv * (0..d).map(|i| uv[i] * hp[(i, r)]).sum::<T>();
            let mut kkt = T::zero();
            for i in 0..d {
                for j in 0..d {
                    kkt += kv[i] * kv[j] * tp[(i * d + j) * d + r];
                }
            }
            t[1] = half * pv * kkt;
            t[2] = pv * (0..d).map(|j| gp[j] * du[(r, j)]).sum::<T>();
            let mut khd = T::zero();
            for i in 0..d {
                for j in 0..d {
                    khd += kv[i] * hp[(i, j)] * dk[(r, j)];
                }
            }
            t[3] = pv * khd;
            t[4] = -pv * pv * hv * gh[r];
            t[5] = pv * gpk * gh[r];
            t[6] = pv * pv * (0..d).map(|i| kv[i] * hh[(i, r)]).sum::<T>();
            t[7] = pv * pv * (0..d).map(|j| gh[j] * dk[(r, j)]).sum::<T>();
            t[8] = pv * gpk * gdiv_k[r];
            let mut cross = T::zero();
            for a in 0..d {
                for b in 0..d {
                    // ∂_a K_b · ∂_r∂_b K_a
                    cross += dk[(a, b)] * sk[(a * d + r) * d + b];
                }
            }
            t[9] = pv * pv * (gdiv_u[r] - cross);
            t[10] = -gpu * gp[r];
            t[11] = -half * khk * gp[r];
            t
        })
        .collect()
}

/// Sum of the `O(Δt)` terms.
pub fn ot_equation_residual<T: Scalar>(
    p: &dyn LogDensity<T>,
    k: &dyn VectorField<T>,
    u: &dyn VectorField<T>,
    h: &dyn ScalarField<T>,
    x: &[T],
) -> Vec<T> {
    ot_equation_terms(p, k, u, h, x)
        .into_iter()
        .map(|t| t.into_iter().sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{ClosureField, GaussianDensity};
    use crate::linalg::Matrix;
    use crate::poly::{PolyField, Polynomial};

    fn std1() -> GaussianDensity<f64> {
        GaussianDensity::standard(1)
    }

    fn phi(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn oz_vanishes_for_unit_gain() {
        let k = PolyField::constant(&[1.0]);
        let h = Polynomial::univariate(&[0.0, 1.0]);
        for x in [-2.0, -0.3, 0.0, 1.7] {
            assert!(oz_equation_residual(&std1(), &k, &h, &[x])[0].abs() < 1e-15);
        }
    }

    #[test]
    fn oz_zero_gain_cases() {
        let k = PolyField::constant(&[0.0]);
        let r = oz_equation_residual(&std1(), &k, &Polynomial::constant(1, 3.0), &[0.4]);
        assert_eq!(r, vec![0.0]);
        let r = oz_equation_residual(&std1(), &k, &Polynomial::univariate(&[0.0, 1.0]), &[0.0]);
        assert!((r[0] - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
    }

    #[test]
    fn oz_vanishes_for_multivariate_kalman_gain() {
        // p = N(m, Σ), h = Hᵀx + c, K = ΣH
        let cov = Matrix::<f64>::from_rows(&[vec![1.3, 0.4], vec![0.4, 0.7]]);
        let p = GaussianDensity::new(vec![0.2, -0.5], cov.clone()).unwrap();
        let hvec = [0.8, -1.1];
        let h = Polynomial::affine(&hvec, 0.3);
        let k = PolyField::constant(&cov.mul_vec(&hvec));
        for x in [[0.0, 0.0], [1.0, -2.0], [-0.7, 0.4]] {
            let r = oz_equation_residual(&p, &k, &h, &x);
            assert!(r.iter().all(|v| v.abs() < 1e-15), "{r:?}");
        }
    }

    #[test]
    fn ot_vanishes_for_linear_gaussian_control() {
        let k = PolyField::constant(&[1.0]);
        let u = PolyField::new(vec![Polynomial::univariate(&[0.0, -0.5])]);
        let h = Polynomial::univariate(&[0.0, 1.0]);
        for x in [-2.5, -1.0, 0.0, 0.3, 2.0] {
            assert!(ot_equation_residual(&std1(), &k, &u, &h, &[x])[0].abs() < 1e-10);
        }
    }

    #[test]
    fn ot_trivial_case() {
        let z = PolyField::constant(&[0.0]);
        let r = ot_equation_residual(&std1(), &z, &z, &Polynomial::zero(1), &[0.6]);
        assert_eq!(r, vec![0.0]);
    }

    #[test]
    fn ot_without_drift_correction() {
        // u = 0 leaves -x p² behind
        let k = PolyField::constant(&[1.0]);
        let u = PolyField::constant(&[0.0]);
        let h = Polynomial::univariate(&[0.0, 1.0]);
        let r = ot_equation_residual(&std1(), &k, &u, &h, &[1.0])[0];
        assert!((r - -0.058549831524319).abs() < 1e-12, "{r}");
        assert!((r + phi(1.0) * phi(1.0)).abs() < 1e-15);
        assert_eq!(ot_equation_residual(&std1(), &k, &u, &h, &[0.0])[0], 0.0);
    }

    #[test]
    fn analytic_fields_match_difference_fields() {
        let kp = PolyField::new(vec![
            Polynomial::<f64>::from_terms(2, vec![(vec![1, 1], 0.5), (vec![0, 0], 1.0)]),
            Polynomial::from_terms(2, vec![(vec![2, 0], -0.3), (vec![0, 1], 0.2)]),
        ]);
        let kc = {
            let kp = kp.clone();
            ClosureField::new(2, 1e-3, move |x: &[f64]| kp.value(x))
        };
        let u = PolyField::new(vec![
            Polynomial::from_terms(2, vec![(vec![0, 2], 0.1)]),
            Polynomial::from_terms(2, vec![(vec![1, 0], -0.4)]),
        ]);
        let p = GaussianDensity::new(vec![0.1, 0.2], Matrix::from_diag(&[1.0, 2.0])).unwrap();
        let h = Polynomial::from_terms(2, vec![(vec![2, 1], 0.3), (vec![1, 0], 1.0)]);
        let x = [0.4, -0.6];
        let a = ot_equation_residual(&p, &kp, &u, &h, &x);
        let b = ot_equation_residual(&p, &kc, &u, &h, &x);
        for (l, r) in a.iter().zip(&b) {
            assert!((l - r).abs() < 1e-6, "{l} {r}");
        }
    }
}
