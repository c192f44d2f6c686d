//! The term-by-term simplification of the `O(Δt)` equation into derivatives
//! of `log p` and `K`, and the eight cancellation identities among the terms.
//!
//! With `g = ∇log p`, `H = ∇²log p`, `D[(i, j)] = ∂_i K_j`, every term is a
//! row vector; Kronecker products are written out as index loops.

use super::{fd_gradient, max_abs};
use crate::error::{FpfError, Result};
use crate::fields::{LogDensity, VectorField};
use crate::linalg::dot;
use crate::scalar::{lit, Scalar};

/// All simplified terms at one point, named after their position in the
/// expansion (`iv13` is the third piece of the first group).
#[derive(Debug, Clone, PartialEq)]
pub struct BTerms<T> {
    pub iv11: Vec<T>,
    pub iv12: Vec<T>,
    pub iv13: Vec<T>,
    pub iv14: Vec<T>,
    pub iv15: Vec<T>,
    pub iv21: Vec<T>,
    pub iv22: Vec<T>,
    pub iv23: Vec<T>,
    pub iv24: Vec<T>,
    pub iv25: Vec<T>,
    pub iv31: Vec<T>,
    pub iv32: Vec<T>,
    pub iv41: Vec<T>,
    pub iv42: Vec<T>,
    pub iv43: Vec<T>,
    pub iv51: Vec<T>,
    pub iv52: Vec<T>,
    pub iv53: Vec<T>,
    pub iv6: Vec<T>,
    pub iv81: Vec<T>,
    pub iv82: Vec<T>,
}

pub fn b_terms<T: Scalar>(p: &dyn LogDensity<T>, k: &dyn VectorField<T>, x: &[T]) -> BTerms<T> {
    let d = x.len();
    let half = lit::<T>(0.5);
    let g = p.grad_log(x);
    let hm = p.hess_log(x);
    let t3 = p.third_log(x);
    let kv = k.value(x);
    let dk = k.jacobian_t(x);
    let sk = k.second(x);
    let gdiv = k.divergence_gradient(x);
    let hdiv = k.divergence_hessian(x);

    let kt_d: Vec<T> = (0..d).map(|b| (0..d).map(|a| kv[a] * dk[(a, b)]).sum()).collect();
    let kt_h: Vec<T> = (0..d).map(|j| (0..d).map(|a| kv[a] * hm[(a, j)]).sum()).collect();
    let h_k: Vec<T> = (0..d).map(|j| (0..d).map(|a| hm[(j, a)] * kv[a]).sum()).collect();
    let ktg = dot(&kv, &g);
    let gtk = dot(&g, &kv);
    let khk = dot(&kt_h, &kv);
    let g_dt: Vec<T> = (0..d).map(|r| (0..d).map(|j| g[j] * dk[(r, j)]).sum()).collect();
    let row = |f: &dyn Fn(usize) -> T| -> Vec<T> { (0..d).map(f).collect() };

    BTerms {
        iv11: row(&|r| -(0..d).map(|b| kt_d[b] * hm[(b, r)]).sum::<T>()),
        iv12: row(&|r| {
            let mut s = T::zero();
            for l in 0..d {
                for i in 0..d {
                    s += kv[l] * kv[i] * t3[(l * d + i) * d + r];
                }
            }
            -s
        }),
        iv13: row(&|r| -(0..d).map(|j| kt_h[j] * dk[(r, j)]).sum::<T>()),
        iv14: row(&|r| {
            let mut s = T::zero();
            for i in 0..d {
                for l in 0..d {
                    s += kv[i] * g[l] * sk[(l * d + i) * d + r];
                }
            }
            -s
        }),
        iv15: row(&|r| -(0..d).map(|i| kv[i] * hdiv[(i, r)]).sum::<T>()),
        iv21: row(&|r| half * g[r] * khk),
        iv22: row(&|r| half * g[r] * ktg * gtk),
        iv23: row(&|r| {
            let mut s = T::zero();
            for i in 0..d {
                for j in 0..d {
                    s += kv[i] * t3[(r * d + i) * d + j] * kv[j];
                }
            }
            half * s
        }),
        iv24: row(&|r| half * kt_h[r] * gtk),
        iv25: row(&|r| half * ktg * h_k[r]),
        iv31: row(&|r| (0..d).map(|j| kt_h[j] * dk[(r, j)]).sum::<T>()),
        iv32: row(&|r| ktg * g_dt[r]),
        iv41: row(&|r| -gtk * kt_h[r]),
        iv42: row(&|r| -gtk * g_dt[r]),
        iv43: row(&|r| -gtk * gdiv[r]),
        iv51: row(&|r| -(0..d).map(|j| kt_h[j] * dk[(r, j)]).sum::<T>()),
        iv52: row(&|r| {
            let mut s = T::zero();
            for j in 0..d {
                for m in 0..d {
                    s += g[j] * dk[(m, j)] * dk[(r, m)];
                }
            }
            -s
        }),
        iv53: row(&|r| -(0..d).map(|j| gdiv[j] * dk[(r, j)]).sum::<T>()),
        iv6: row(&|r| gtk * gdiv[r]),
        iv81: row(&|r| -half * khk * g[r]),
        iv82: row(&|r| -half * ktg * gtk * g[r]),
    }
}

/// The second group before simplification:
/// `½ Kᵀ (1/p) ∂_r(∇²p) K` for each `r`.
pub fn iv2_unsimplified<T: Scalar>(p: &dyn LogDensity<T>, k: &dyn VectorField<T>, x: &[T]) -> Vec<T> {
    let d = x.len();
    let pv = p.density(x);
    let t = p.third_density(x);
    let kv = k.value(x);
    (0..d)
        .map(|r| {
            let mut s = T::zero();
            for i in 0..d {
                for j in 0..d {
                    s += kv[i] * t[(r * d + i) * d + j] * kv[j];
                }
            }
            lit::<T>(0.5) * s / pv
        })
        .collect()
}

/// Both sides of an identity and their largest componentwise gap.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityGap<T> {
    pub lhs: Vec<T>,
    pub rhs: Vec<T>,
    pub gap: T,
}

impl<T: Scalar> IdentityGap<T> {
    fn new(lhs: Vec<T>, rhs: Vec<T>) -> Self {
        let diff: Vec<T> = lhs.iter().zip(&rhs).map(|(&a, &b)| a - b).collect();
        let gap = max_abs(&diff);
        Self { lhs, rhs, gap }
    }
}

fn add<T: Scalar>(parts: &[&[T]]) -> Vec<T> {
    (0..parts[0].len()).map(|r| parts.iter().map(|v| v[r]).sum()).collect()
}

fn neg<T: Scalar>(v: &[T]) -> Vec<T> {
    v.iter().map(|&a| -a).collect()
}

/// Identity `id ∈ 1..=8`. Identities 6 to 8 have a gradient on the right,
/// taken by central differences with `fd_step`; the others are pointwise.
pub fn appendix_b_identity_check<T: Scalar>(
    id: usize,
    p: &dyn LogDensity<T>,
    k: &dyn VectorField<T>,
    x: &[T],
    fd_step: T,
) -> Result<IdentityGap<T>> {
    let b = b_terms(p, k, x);
    let half = lit::<T>(0.5);
    let d = x.len();
    let out = match id {
        1 => IdentityGap::new(b.iv13, neg(&b.iv31)),
        2 => IdentityGap::new(b.iv32, neg(&b.iv42)),
        3 => IdentityGap::new(b.iv43, neg(&b.iv6)),
        4 => IdentityGap::new(
            [b.iv21, b.iv22].concat(),
            [neg(&b.iv81), neg(&b.iv82)].concat(),
        ),
        5 => IdentityGap::new(add(&[&b.iv24, &b.iv25, &b.iv41]), vec![T::zero(); d]),
        6 => {
            let s = |z: &[T]| -> T {
                let kv = k.value(z);
                let hp = p.hess_density(z);
                let khk: T = (0..d).map(|i| (0..d).map(|j| kv[i] * hp[(i, j)] * kv[j]).sum::<T>()).sum();
                let kg = dot(&kv, &p.grad_log(z));
                -half * khk / p.density(z) + half * kg * kg
            };
            IdentityGap::new(add(&[&b.iv12, &b.iv23, &b.iv51]), fd_gradient(&s, x, fd_step))
        }
        7 => {
            let s = |z: &[T]| -> T {
                let kv = k.value(z);
                let dk = k.jacobian_t(z);
                let g = p.grad_log(z);
                let mut acc = T::zero();
                for i in 0..d {
                    for j in 0..d {
                        acc += kv[i] * dk[(i, j)] * g[j];
                    }
                }
                -acc
            };
            IdentityGap::new(add(&[&b.iv11, &b.iv14, &b.iv52]), fd_gradient(&s, x, fd_step))
        }
        8 => {
            let s = |z: &[T]| -> T { -dot(&k.divergence_gradient(z), &k.value(z)) };
            IdentityGap::new(add(&[&b.iv15, &b.iv53]), fd_gradient(&s, x, fd_step))
        }
        other => return Err(FpfError::UnknownIdentity(other)),
    };
    Ok(out)
}

/// How the last term of the expansion of `Σ_ij ∂_i∂_j(p K_i K_j)` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lm2Trace {
    /// `p Σ_ij ∂_j K_i ∂_i K_j`, i.e. `p tr[(∇Kᵀ)²]`.
    Index,
    /// `p tr[(∇Kᵀ)(∇Kᵀ)ᵀ]`; equal to the above only for symmetric `∇Kᵀ`.
    Matrix,
}

/// Six-term expansion of `Σ_ij ∂_i∂_j(p K_i K_j)`.
pub fn lm2_rhs<T: Scalar>(p: &dyn LogDensity<T>, k: &dyn VectorField<T>, x: &[T], trace: Lm2Trace) -> T {
    let d = x.len();
    let two = lit::<T>(2.0);
    let pv = p.density(x);
    let gp = p.grad_density(x);
    let hp = p.hess_density(x);
    let kv = k.value(x);
    let dk = k.jacobian_t(x);
    let div = k.divergence(x);
    let gdiv = k.divergence_gradient(x);
    let mut khk = T::zero();
    let mut kdg = T::zero();
    let mut tr = T::zero();
    for i in 0..d {
        for j in 0..d {
            khk += kv[i] * hp[(i, j)] * kv[j];
            kdg += kv[i] * dk[(i, j)] * gp[j];
            tr += match trace {
                Lm2Trace::Index => dk[(j, i)] * dk[(i, j)],
                Lm2Trace::Matrix => dk[(i, j)] * dk[(i, j)],
            };
        }
    }
    khk + two * dot(&gp, &kv) * div + two * kdg + pv * div * div + two * pv * dot(&gdiv, &kv) + pv * tr
}

/// Left side by central second differences of `p K_i K_j`.
pub fn lm2_lhs<T: Scalar>(p: &dyn LogDensity<T>, k: &dyn VectorField<T>, x: &[T], fd_step: T) -> T {
    let d = x.len();
    let f = |z: &[T], i: usize, j: usize| -> T {
        let kv = k.value(z);
        p.density(z) * kv[i] * kv[j]
    };
    let at = |i: usize, si: T, j: usize, sj: T| -> Vec<T> {
        let mut z = x.to_vec();
        z[i] += si;
        z[j] += sj;
        z
    };
    let h = fd_step;
    let mut total = T::zero();
    for i in 0..d {
        for j in 0..d {
            total += if i == j {
                (f(&at(i, h, i, T::zero()), i, i) - lit::<T>(2.0) * f(x, i, i) + f(&at(i, -h, i, T::zero()), i, i)) / (h * h)
            } else {
                (f(&at(i, h, j, h), i, j) - f(&at(i, h, j, -h), i, j) - f(&at(i, -h, j, h), i, j)
                    + f(&at(i, -h, j, -h), i, j))
                    / (lit::<T>(4.0) * h * h)
            };
        }
    }
    total
}

pub fn lm2_identity_check<T: Scalar>(p: &dyn LogDensity<T>, k: &dyn VectorField<T>, x: &[T], fd_step: T) -> IdentityGap<T> {
    IdentityGap::new(vec![lm2_lhs(p, k, x, fd_step)], vec![lm2_rhs(p, k, x, Lm2Trace::Index)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GaussianDensity;
    use crate::identity::{converges, probes};
    use crate::linalg::Matrix;
    use crate::poly::{PolyField, Polynomial};
    use rand::SeedableRng;

    fn rotation() -> PolyField<f64> {
        PolyField::new(vec![
            Polynomial::monomial(vec![0, 1], 1.0),
            Polynomial::monomial(vec![1, 0], -1.0),
        ])
    }

    #[test]
    fn expansions_reassemble() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let p = probes::random_gaussian::<f64, _>(3, &mut rng);
            let k = probes::random_poly_field(3, 3, 0.4, &mut rng);
            let x = probes::random_point(3, 1.0, &mut rng);
            let b = b_terms(&p, &k, &x);
            let whole = iv2_unsimplified(&p, &k, &x);
            let parts = add(&[&b.iv21, &b.iv22, &b.iv23, &b.iv24, &b.iv25]);
            for (a, c) in whole.iter().zip(&parts) {
                assert!((a - c).abs() <= 1e-10 * a.abs().max(1.0), "{a} {c}");
            }
        }
    }

    #[test]
    fn scalar_transpose_is_exact() {
        let p = GaussianDensity::new(vec![0.3, -0.2], Matrix::from_diag(&[1.0, 2.0])).unwrap();
        let k = PolyField::new(vec![Polynomial::monomial(vec![0, 1], 1.0), Polynomial::monomial(vec![1, 1], 1.0)]);
        let r = appendix_b_identity_check(2, &p, &k, &[0.7, -1.1], 1e-4).unwrap();
        assert_eq!(r.gap, 0.0);
    }

    #[test]
    fn identity_six_on_diagonal_gaussian() {
        let p = GaussianDensity::new(vec![0.0, 0.0], Matrix::from_diag(&[1.0, 2.0])).unwrap();
        let k = PolyField::new(vec![Polynomial::monomial(vec![0, 1], 1.0), Polynomial::monomial(vec![1, 1], 1.0)]);
        let x = [0.45, -0.8];
        let r = appendix_b_identity_check(6, &p, &k, &x, 1e-4).unwrap();
        assert!(r.gap <= 1e-6, "{}", r.gap);
        let a = appendix_b_identity_check(6, &p, &k, &x, 4e-2).unwrap().gap;
        let b = appendix_b_identity_check(6, &p, &k, &x, 2e-2).unwrap().gap;
        assert!(converges(a, b, 3.0, 1e-10), "{a} {b}");
    }

    #[test]
    fn identity_eight_in_one_dimension() {
        let p = GaussianDensity::<f64>::standard(1);
        let k = PolyField::new(vec![Polynomial::univariate(&[0.0, 0.0, 1.0])]);
        for x in [-1.3, 0.2, 0.9] {
            let r = appendix_b_identity_check(8, &p, &k, &[x], 1e-4).unwrap();
            assert!((r.lhs[0] + 4.0 * x).abs() < 1e-14);
            assert!(r.gap <= 1e-10, "{}", r.gap);
        }
    }

    #[test]
    fn all_identities_on_random_probes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let p = probes::random_gaussian::<f64, _>(2, &mut rng);
            let k = probes::random_poly_field(2, 3, 0.4, &mut rng);
            let x = probes::random_point(2, 1.0, &mut rng);
            for id in 1..=8 {
                let r = appendix_b_identity_check(id, &p, &k, &x, 1e-4).unwrap();
                assert!(r.gap <= 1e-5, "id {id}: {}", r.gap);
            }
        }
    }

    #[test]
    fn unknown_identity() {
        let p = GaussianDensity::<f64>::standard(1);
        let k = PolyField::constant(&[1.0]);
        assert_eq!(appendix_b_identity_check(9, &p, &k, &[0.0], 1e-4).unwrap_err(), FpfError::UnknownIdentity(9));
    }

    #[test]
    fn lm2_constant_gain() {
        let p = GaussianDensity::<f64>::standard(1);
        let k = PolyField::constant(&[1.5]);
        let x = [0.7];
        let r = lm2_identity_check(&p, &k, &x, 1e-3);
        let p2 = p.hess_density(&x)[(0, 0)];
        assert!((r.rhs[0] - 2.25 * p2).abs() < 1e-15);
        assert!(r.gap <= 1e-6, "{}", r.gap);
    }

    #[test]
    fn lm2_rotation_needs_index_trace() {
        let p = GaussianDensity::new(vec![0.1, -0.3], Matrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.8]])).unwrap();
        let k = rotation();
        let x = [0.4, 0.5];
        assert_eq!(k.divergence(&x), 0.0);
        let r = lm2_identity_check(&p, &k, &x, 1e-3);
        assert!(r.gap <= 1e-6, "{}", r.gap);
        // the matrix-form trace is off by 4p for this antisymmetric Jacobian
        let literal = lm2_rhs(&p, &k, &x, Lm2Trace::Matrix);
        assert!((literal - r.rhs[0] - 4.0 * p.density(&x)).abs() < 1e-12);
    }

    #[test]
    fn lm2_random_cubic_sweep() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let p = probes::random_gaussian::<f64, _>(2, &mut rng);
            let k = probes::random_poly_field(2, 3, 0.4, &mut rng);
            let x = probes::random_point(2, 1.0, &mut rng);
            worst = worst.max(lm2_identity_check(&p, &k, &x, 1e-3).gap);
        }
        assert!(worst <= 1e-5, "{worst}");
    }
}
