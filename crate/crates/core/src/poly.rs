//! Multivariate polynomials with exact derivatives of any order.
//!
//! They span the Galerkin trial space and also serve as observation
//! functions and as probe fields for the identity checks.

use crate::fields::{ScalarField, VectorField};
use crate::linalg::Matrix;
use crate::scalar::{count, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial<T> {
    dim: usize,
    terms: Vec<(Vec<u32>, T)>,
}

/// Exponent vectors of every monomial of total degree `1..=max_degree` in
/// `dim` variables, ordered by degree and then lexicographically.
pub fn monomial_exponents(dim: usize, max_degree: u32) -> Vec<Vec<u32>> {
    fn fill(dim: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == dim - 1 {
            let mut e = prefix.clone();
            e.push(remaining);
            out.push(e);
            return;
        }
        for k in (0..=remaining).rev() {
            prefix.push(k);
            fill(dim, remaining - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for deg in 1..=max_degree {
        fill(dim, deg, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

/// `n (n-1) ... (n-k+1)`, zero when `k > n`.
#[inline]
fn falling<T: Scalar>(n: u32, k: u32) -> T {
    if k > n {
        return T::zero();
    }
    let mut acc = 1u64;
    for j in 0..k {
        acc *= u64::from(n - j);
    }
    T::from_u64(acc).expect("small integer")
}

impl<T: Scalar> Polynomial<T> {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn constant(dim: usize, c: T) -> Self {
        Self {
            dim,
            terms: vec![(vec![0; dim], c)],
        }
    }

    /// `Hᵀx + c`.
    pub fn affine(linear: &[T], offset: T) -> Self {
        let dim = linear.len();
        let mut terms = vec![(vec![0; dim], offset)];
        for (i, &h) in linear.iter().enumerate() {
            let mut e = vec![0; dim];
            e[i] = 1;
            terms.push((e, h));
        }
        Self { dim, terms }
    }

    /// One-variable polynomial `c0 + c1 x + c2 x^2 + ...`.
    pub fn univariate(coeffs: &[T]) -> Self {
        Self {
            dim: 1,
            terms: coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| (vec![k as u32], c))
                .collect(),
        }
    }

    pub fn monomial(exponents: Vec<u32>, coeff: T) -> Self {
        Self {
            dim: exponents.len(),
            terms: vec![(exponents, coeff)],
        }
    }

    pub fn from_terms(dim: usize, terms: Vec<(Vec<u32>, T)>) -> Self {
        assert!(terms.iter().all(|(e, _)| e.len() == dim), "exponent length mismatch");
        Self { dim, terms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(Vec<u32>, T)] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|(_, c)| *c != T::zero())
            .map(|(e, _)| e.iter().sum())
            .max()
            .unwrap_or(0)
    }

    /// Affine decomposition `(H, c)` when every term has degree at most one.
    pub fn as_affine(&self) -> Option<(Vec<T>, T)> {
        if self.degree() > 1 {
            return None;
        }
        let mut lin = vec![T::zero(); self.dim];
        let mut c = T::zero();
        for (e, coef) in &self.terms {
            match e.iter().position(|&k| k == 1) {
                Some(i) => lin[i] += *coef,
                None => c += *coef,
            }
        }
        Some((lin, c))
    }

    pub fn add_constant(&self, c: T) -> Self {
        let mut out = self.clone();
        out.terms.push((vec![0; self.dim], c));
        out
    }

    /// Evaluates the mixed partial derivative `∂^alpha p` at `x`.
    pub fn eval_derivative(&self, x: &[T], alpha: &[u32]) -> T {
        debug_assert_eq!(x.len(), self.dim);
        let mut total = T::zero();
        'terms: for (e, c) in &self.terms {
            let mut v = *c;
            for k in 0..self.dim {
                if alpha[k] > e[k] {
                    continue 'terms;
                }
                v *= falling::<T>(e[k], alpha[k]);
                let p = e[k] - alpha[k];
                if p > 0 {
                    v *= x[k].powi(p as i32);
                }
            }
            total += v;
        }
        total
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.eval_derivative(x, &vec![0; self.dim])
    }

    fn unit(&self, idx: &[usize]) -> Vec<u32> {
        let mut a = vec![0u32; self.dim];
        for &i in idx {
            a[i] += 1;
        }
        a
    }

    pub fn gradient(&self, x: &[T]) -> Vec<T> {
        (0..self.dim)
            .map(|i| self.eval_derivative(x, &self.unit(&[i])))
            .collect()
    }

    pub fn hessian(&self, x: &[T]) -> Matrix<T> {
        let d = self.dim;
        let mut h = Matrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = self.eval_derivative(x, &self.unit(&[i, j]));
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        h
    }

    /// Third derivatives, flattened as `[l*d*d + i*d + j] = ∂³p/∂x_l∂x_i∂x_j`.
    pub fn third_derivatives(&self, x: &[T]) -> Vec<T> {
        let d = self.dim;
        let mut out = vec![T::zero(); d * d * d];
        for l in 0..d {
            for i in 0..d {
                for j in 0..d {
                    out[(l * d + i) * d + j] = self.eval_derivative(x, &self.unit(&[l, i, j]));
                }
            }
        }
        out
    }
}

impl<T: Scalar> ScalarField<T> for Polynomial<T> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[T]) -> T {
        self.eval(x)
    }
    fn gradient(&self, x: &[T]) -> Vec<T> {
        Polynomial::gradient(self, x)
    }
    fn hessian(&self, x: &[T]) -> Matrix<T> {
        Polynomial::hessian(self, x)
    }
    fn third(&self, x: &[T]) -> Vec<T> {
        self.third_derivatives(x)
    }
}

/// A vector field whose components are polynomials.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyField<T> {
    components: Vec<Polynomial<T>>,
}

impl<T: Scalar> PolyField<T> {
    pub fn new(components: Vec<Polynomial<T>>) -> Self {
        let d = components.len();
        assert!(components.iter().all(|p| p.dim() == d), "field must map R^d to R^d");
        Self { components }
    }

    /// Constant field.
    pub fn constant(values: &[T]) -> Self {
        let d = values.len();
        Self::new(values.iter().map(|&c| Polynomial::constant(d, c)).collect())
    }

    pub fn components(&self) -> &[Polynomial<T>] {
        &self.components
    }

    /// Gradient field `∇φ` of a scalar polynomial.
    pub fn gradient_of(phi: &Polynomial<T>) -> Self {
        let d = phi.dim();
        let comps = (0..d)
            .map(|k| {
                let terms = phi
                    .terms()
                    .iter()
                    .filter(|(e, _)| e[k] > 0)
                    .map(|(e, c)| {
                        let mut e2 = e.clone();
                        e2[k] -= 1;
                        (e2, *c * count::<T>(e[k] as usize))
                    })
                    .collect();
                Polynomial::from_terms(d, terms)
            })
            .collect();
        Self::new(comps)
    }
}

impl<T: Scalar> VectorField<T> for PolyField<T> {
    fn dim(&self) -> usize {
        self.components.len()
    }

    fn value(&self, x: &[T]) -> Vec<T> {
        self.components.iter().map(|p| p.eval(x)).collect()
    }

    fn jacobian_t(&self, x: &[T]) -> Matrix<T> {
        let d = self.dim();
        let grads: Vec<Vec<T>> = self.components.iter().map(|p| p.gradient(x)).collect();
        Matrix::from_fn(d, d, |i, j| grads[j][i])
    }

    fn second(&self, x: &[T]) -> Vec<T> {
        let d = self.dim();
        let mut out = vec![T::zero(); d * d * d];
        for (l, p) in self.components.iter().enumerate() {
            let h = p.hessian(x);
            for i in 0..d {
                for j in 0..d {
                    out[(l * d + i) * d + j] = h[(i, j)];
                }
            }
        }
        out
    }

    fn third(&self, x: &[T]) -> Vec<T> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d * d * d);
        for p in &self.components {
            out.extend(p.third_derivatives(x));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_size_matches_binomial_count() {
        // C(d+D, D) - 1
        assert_eq!(monomial_exponents(1, 3).len(), 3);
        assert_eq!(monomial_exponents(2, 3).len(), 9);
        assert_eq!(monomial_exponents(3, 2).len(), 9);
        assert_eq!(monomial_exponents(3, 3).len(), 19);
    }

    #[test]
    fn derivatives_of_monomial() {
        // p = 3 x^2 y^3
        let p = Polynomial::<f64>::monomial(vec![2, 3], 3.0);
        let x = [1.5, -0.5];
        assert!((p.eval(&x) - 3.0 * 2.25 * -0.125).abs() < 1e-14);
        let g = p.gradient(&x);
        assert!((g[0] - 6.0 * 1.5 * -0.125).abs() < 1e-14);
        assert!((g[1] - 9.0 * 2.25 * 0.25).abs() < 1e-14);
        let h = p.hessian(&x);
        assert!((h[(0, 1)] - 18.0 * 1.5 * 0.25).abs() < 1e-14);
        assert_eq!(h[(0, 1)], h[(1, 0)]);
        assert_eq!(p.eval_derivative(&x, &[3, 0]), 0.0);
    }

    #[test]
    fn gradient_field_has_symmetric_jacobian() {
        let phi = Polynomial::<f64>::from_terms(2, vec![(vec![2, 1], 1.0), (vec![0, 3], -2.0), (vec![1, 1], 0.5)]);
        let k = PolyField::gradient_of(&phi);
        let j = k.jacobian_t(&[0.3, -1.1]);
        assert!((j[(0, 1)] - j[(1, 0)]).abs() < 1e-14);
    }

    #[test]
    fn affine_roundtrip() {
        let p = Polynomial::affine(&[2.0, -1.0], 0.5);
        assert_eq!(p.as_affine(), Some((vec![2.0, -1.0], 0.5)));
        assert!(Polynomial::univariate(&[0.0, 0.0, 1.0]).as_affine().is_none());
    }
}
