//! Seeded random probe configurations.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::fields::GaussianDensity;
use crate::linalg::Matrix;
use crate::poly::{monomial_exponents, PolyField, Polynomial};
use crate::scalar::{lit, Scalar};

fn normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    lit(z)
}

/// Polynomial of total degree `≤ degree` with `N(0, scale²)` coefficients,
/// constant term included.
pub fn random_polynomial<T: Scalar, R: Rng + ?Sized>(dim: usize, degree: u32, scale: f64, rng: &mut R) -> Polynomial<T> {
    let mut terms = vec![(vec![0; dim], normal::<T, R>(rng) * lit(scale))];
    for e in monomial_exponents(dim, degree) {
        terms.push((e, normal::<T, R>(rng) * lit(scale)));
    }
    Polynomial::from_terms(dim, terms)
}

pub fn random_poly_field<T: Scalar, R: Rng + ?Sized>(dim: usize, degree: u32, scale: f64, rng: &mut R) -> PolyField<T> {
    PolyField::new((0..dim).map(|_| random_polynomial(dim, degree, scale, rng)).collect())
}

/// Uniform point in `[-half, half]^dim`.
pub fn random_point<T: Scalar, R: Rng + ?Sized>(dim: usize, half: f64, rng: &mut R) -> Vec<T> {
    (0..dim).map(|_| lit(rng.random_range(-half..half))).collect()
}

/// Gaussian with `N(0, 0.25)` mean entries and covariance `LLᵀ/4 + ½I`.
pub fn random_gaussian<T: Scalar, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> GaussianDensity<T> {
    let mean = (0..dim).map(|_| normal::<T, R>(rng) * lit(0.5)).collect();
    let l = Matrix::from_fn(dim, dim, |i, j| if j <= i { normal::<T, R>(rng) * lit(0.5) } else { T::zero() });
    let mut cov = l.matmul(&l.transpose());
    for i in 0..dim {
        cov[(i, i)] += lit(0.5);
    }
    GaussianDensity::new(mean, cov).expect("positive definite by construction")
}
