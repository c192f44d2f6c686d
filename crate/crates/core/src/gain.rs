//! Gain solvers for `∇ᵀ(pK) = -(h - ĥ)p` and the explicit control drift
//! `u = -½K(h + ĥ) + Ω`, `Ω = ½(∇Kᵀ)ᵀK`.
//!
//! Per-particle arrays are flat and row-major: `k[i*d + j]`,
//! `k_jac[(i*d + a)*d + j] = ∂K_j/∂x_a` at particle `i`.

use rayon::prelude::*;

use crate::error::{FpfError, Result};
use crate::grid::GridDensity;
use crate::linalg::Matrix;
use crate::model::{h_values, stats_from_h, ParticleEnsemble, PosteriorStats, SdeModel};
use crate::poly::{monomial_exponents, Polynomial};
use crate::scalar::{count, lit, Scalar};

/// Particles per block in ordered parallel reductions. Fixed so the
/// floating point summation order never depends on the thread count.
const REDUCE_BLOCK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainMethod<T> {
    ExactGaussian,
    Constant,
    /// Monomial Galerkin basis of total degree `1..=degree`. `ridge: None`
    /// means no ridge at degree 1 and `1e-6·tr(A)/dim(A)` above.
    Galerkin { degree: u32, ridge: Option<T> },
}

impl<T: Scalar> GainMethod<T> {
    pub fn name(&self) -> &'static str {
        match self {
            GainMethod::ExactGaussian => "exact_gaussian",
            GainMethod::Constant => "constant",
            GainMethod::Galerkin { .. } => "galerkin",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainField<T> {
    pub dim: usize,
    pub k: Vec<T>,
    pub k_jac: Vec<T>,
    pub u: Vec<T>,
    /// `u_jac[(i*d + a)*d + j] = ∂u_j/∂x_a`.
    pub u_jac: Vec<T>,
    pub method: &'static str,
    /// Galerkin coefficients, when applicable.
    pub coeffs: Option<Vec<T>>,
}

impl<T: Scalar> GainField<T> {
    pub fn len(&self) -> usize {
        self.k.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn k_at(&self, i: usize) -> &[T] {
        &self.k[i * self.dim..(i + 1) * self.dim]
    }

    pub fn u_at(&self, i: usize) -> &[T] {
        &self.u[i * self.dim..(i + 1) * self.dim]
    }

    pub fn k_jac_at(&self, i: usize) -> Matrix<T> {
        let d = self.dim;
        Matrix::from_row_slice(d, d, &self.k_jac[i * d * d..(i + 1) * d * d])
    }

    pub fn all_finite(&self) -> bool {
        self.k.iter().chain(&self.k_jac).chain(&self.u).chain(&self.u_jac).all(|v| v.is_finite())
    }

    /// `∇vᵀ` per particle for `v = K dz + u dt`.
    pub fn displacement_jacobians(&self, dz: T, dt: T) -> Vec<T> {
        self.k_jac
            .iter()
            .zip(&self.u_jac)
            .map(|(&kj, &uj)| kj * dz + uj * dt)
            .collect()
    }

    /// Whether every `∇Kᵀ` is symmetric to `tol`.
    pub fn jacobians_symmetric(&self, tol: T) -> bool {
        (0..self.len()).all(|i| self.k_jac_at(i).is_symmetric(tol))
    }
}

/// `uⁱ = -½Kⁱ(h(Xⁱ) + ĥ) + ½(∇Kᵀ(Xⁱ))ᵀKⁱ`.
pub fn compute_u<T: Scalar>(dim: usize, k: &[T], k_jac: &[T], h_vals: &[T], h_hat: T) -> Vec<T> {
    let d = dim;
    let half = lit::<T>(0.5);
    let mut u = vec![T::zero(); k.len()];
    for (i, &h) in h_vals.iter().enumerate() {
        let ki = &k[i * d..(i + 1) * d];
        let ji = &k_jac[i * d * d..(i + 1) * d * d];
        for j in 0..d {
            let omega: T = (0..d).map(|a| ji[a * d + j] * ki[a]).sum();
            u[i * d + j] = -half * ki[j] * (h + h_hat) + half * omega;
        }
    }
    u
}

/// `∂u_j/∂x_a` for every particle. `k_second[((i*d + a)*d + b)*d + j] = ∂_a∂_b K_j`.
fn compute_u_jac<T: Scalar>(
    dim: usize,
    k: &[T],
    k_jac: &[T],
    k_second: Option<&[T]>,
    h_vals: &[T],
    grad_h: &[T],
    h_hat: T,
) -> Vec<T> {
    let d = dim;
    let half = lit::<T>(0.5);
    let mut out = vec![T::zero(); k_jac.len()];
    for (i, &h) in h_vals.iter().enumerate() {
        let ki = &k[i * d..(i + 1) * d];
        let ji = &k_jac[i * d * d..(i + 1) * d * d];
        let gi = &grad_h[i * d..(i + 1) * d];
        for a in 0..d {
            for j in 0..d {
                let mut v = -half * ji[a * d + j] * (h + h_hat) - half * ki[j] * gi[a];
                let mut corr = T::zero();
                for b in 0..d {
                    if let Some(s) = k_second {
                        corr += s[((i * d + a) * d + b) * d + j] * ki[b];
                    }
                    corr += ji[b * d + j] * ji[a * d + b];
                }
                v += half * corr;
                out[(i * d + a) * d + j] = v;
            }
        }
    }
    out
}

fn grad_h_values<T: Scalar>(ens: &ParticleEnsemble<T>, model: &SdeModel<T>) -> Vec<T> {
    ens.states()
        .par_chunks(ens.dim())
        .flat_map_iter(|x| model.grad_h(x))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn assemble<T: Scalar>(
    ens: &ParticleEnsemble<T>,
    model: &SdeModel<T>,
    h_vals: &[T],
    h_hat: T,
    k: Vec<T>,
    k_jac: Vec<T>,
    k_second: Option<Vec<T>>,
    method: &'static str,
    coeffs: Option<Vec<T>>,
) -> GainField<T> {
    let d = ens.dim();
    let grad_h = grad_h_values(ens, model);
    let u = compute_u(d, &k, &k_jac, h_vals, h_hat);
    let u_jac = compute_u_jac(d, &k, &k_jac, k_second.as_deref(), h_vals, &grad_h, h_hat);
    GainField {
        dim: d,
        k,
        k_jac,
        u,
        u_jac,
        method,
        coeffs,
    }
}

fn constant_field<T: Scalar>(
    ens: &ParticleEnsemble<T>,
    model: &SdeModel<T>,
    h_vals: &[T],
    h_hat: T,
    kc: &[T],
    method: &'static str,
) -> GainField<T> {
    let n = ens.len();
    let d = ens.dim();
    let k = kc.repeat(n);
    assemble(ens, model, h_vals, h_hat, k, vec![T::zero(); n * d * d], None, method, None)
}

/// `K = ΣH` for Gaussian `p` and affine `h(x) = Hᵀx + c`.
pub fn solve_gain_exact_gaussian<T: Scalar>(
    ens: &ParticleEnsemble<T>,
    model: &SdeModel<T>,
    stats: &PosteriorStats<T>,
) -> Result<GainField<T>> {
    let (h_lin, _) = model.obs.as_affine().ok_or(FpfError::NonAffineObservation)?;
    if stats.cov.min_eigenvalue() < lit(-1e-10) {
        return Err(FpfError::CovarianceNotPsd);
    }
    let kc = stats.cov.mul_vec(&h_lin);
    let h_vals = h_values(ens, model);
    Ok(constant_field(ens, model, &h_vals, stats.h_hat, &kc, "exact_gaussian"))
}

fn constant_gain_vector<T: Scalar>(ens: &ParticleEnsemble<T>, h_vals: &[T], stats: &PosteriorStats<T>) -> Vec<T> {
    let d = ens.dim();
    let mut kc = vec![T::zero(); d];
    for (x, &h) in ens.iter().zip(h_vals) {
        let w = h - stats.h_hat;
        for j in 0..d {
            kc[j] += w * (x[j] - stats.mean[j]);
        }
    }
    let n = count::<T>(ens.len());
    kc.iter_mut().for_each(|v| *v /= n);
    kc
}

/// Empirical cross-covariance gain `K = (1/N) Σ (h(Xⁱ) - ĥ)(Xⁱ - m)`.
pub fn solve_gain_constant<T: Scalar>(ens: &ParticleEnsemble<T>, model: &SdeModel<T>) -> GainField<T> {
    let h_vals = h_values(ens, model);
    let stats = stats_from_h(ens, &h_vals);
    let kc = constant_gain_vector(ens, &h_vals, &stats);
    constant_field(ens, model, &h_vals, stats.h_hat, &kc, "constant")
}

/// Monomials of total degree `1..=degree`; the constant is excluded since
/// its gradient vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinBasis<T> {
    dim: usize,
    degree: u32,
    monomials: Vec<Polynomial<T>>,
}

impl<T: Scalar> GalerkinBasis<T> {
    pub fn new(dim: usize, degree: u32) -> Result<Self> {
        if dim == 0 || degree == 0 {
            return Err(FpfError::InvalidArgument("Galerkin basis needs dim ≥ 1 and degree ≥ 1".into()));
        }
        let monomials = monomial_exponents(dim, degree)
            .into_iter()
            .map(|e| Polynomial::monomial(e, T::one()))
            .collect();
        Ok(Self { dim, degree, monomials })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn functions(&self) -> &[Polynomial<T>] {
        &self.monomials
    }

    pub fn values(&self, x: &[T]) -> Vec<T> {
        self.monomials.iter().map(|m| m.eval(x)).collect()
    }

    /// Row `k` is `∇ψ_k(x)`.
    pub fn gradients(&self, x: &[T]) -> Vec<Vec<T>> {
        self.monomials.iter().map(|m| m.gradient(x)).collect()
    }

    /// `φ = Σ c_k ψ_k` as a polynomial.
    pub fn potential(&self, coeffs: &[T]) -> Polynomial<T> {
        let terms = self
            .monomials
            .iter()
            .zip(coeffs)
            .map(|(m, &c)| (m.terms()[0].0.clone(), c))
            .collect();
        Polynomial::from_terms(self.dim, terms)
    }
}

/// Weak-form Galerkin gain: solves `(A + λI)c = b` with the empirical
/// measure and returns `K = Σ c_k ∇ψ_k`.
pub fn solve_gain_galerkin<T: Scalar>(
    ens: &ParticleEnsemble<T>,
    model: &SdeModel<T>,
    basis: &GalerkinBasis<T>,
    ridge: Option<T>,
) -> Result<GainField<T>> {
    let h_vals = h_values(ens, model);
    let h_hat = h_vals.iter().copied().sum::<T>() / count(ens.len());
    galerkin_with(ens, model, basis, ridge, &h_vals, h_hat)
}

fn galerkin_with<T: Scalar>(
    ens: &ParticleEnsemble<T>,
    model: &SdeModel<T>,
    basis: &GalerkinBasis<T>,
    ridge: Option<T>,
    h_vals: &[T],
    h_hat: T,
) -> Result<GainField<T>> {
    let d = ens.dim();
    let n = ens.len();
    let m = basis.len();
    if basis.dim() != d {
        return Err(FpfError::DimensionMismatch { expected: d, got: basis.dim() });
    }
    if 2 * m > n {
        return Err(FpfError::InvalidArgument(format!(
            "Galerkin basis of size {m} needs at least {} particles",
            2 * m
        )));
    }
    // Gram matrix and load vector, reduced blockwise in a fixed order.
    let partials: Vec<(Vec<T>, Vec<T>)> = ens
        .states()
        .par_chunks(REDUCE_BLOCK * d)
        .zip(h_vals.par_chunks(REDUCE_BLOCK))
        .map(|(xs, hs)| {
            let mut a = vec![T::zero(); m * m];
            let mut b = vec![T::zero(); m];
            for (x, &h) in xs.chunks_exact(d).zip(hs) {
                let g = basis.gradients(x);
                let psi = basis.values(x);
                for k in 0..m {
                    b[k] += (h - h_hat) * psi[k];
                    for l in k..m {
                        a[k * m + l] += crate::linalg::dot(&g[k], &g[l]);
                    }
                }
            }
            (a, b)
        })
        .collect();
    let mut a = Matrix::zeros(m, m);
    let mut b = vec![T::zero(); m];
    for (pa, pb) in &partials {
        for k in 0..m {
            b[k] += pb[k];
            for l in k..m {
                a[(k, l)] += pa[k * m + l];
            }
        }
    }
    let nn = count::<T>(n);
    for k in 0..m {
        b[k] /= nn;
        for l in k..m {
            let v = a[(k, l)] / nn;
            a[(k, l)] = v;
            a[(l, k)] = v;
        }
    }
    // the degree-1 Gram matrix is the ensemble covariance and needs no ridge
    let lambda = ridge.unwrap_or_else(|| {
        if basis.degree() == 1 {
            T::zero()
        } else {
            lit::<T>(1e-6) * a.trace() / count(m)
        }
    });
    for k in 0..m {
        a[(k, k)] += lambda;
    }
    let chol = a.cholesky().ok_or(FpfError::GramSingular)?;
    let c = Matrix::cholesky_solve(&chol, &b);
    if c.iter().any(|v| !v.is_finite()) {
        return Err(FpfError::GramSingular);
    }

    let phi = basis.potential(&c);
    let per: Vec<(Vec<T>, Vec<T>, Vec<T>)> = ens
        .states()
        .par_chunks(d)
        .map(|x| {
            let k = phi.gradient(x);
            let hess = phi.hessian(x);
            let third = phi.third_derivatives(x);
            (k, hess.as_slice().to_vec(), third)
        })
        .collect();
    let mut k = Vec::with_capacity(n * d);
    let mut k_jac = Vec::with_capacity(n * d * d);
    let mut k_second = Vec::with_capacity(n * d * d * d);
    for (ki, ji, si) in per {
        k.extend(ki);
        k_jac.extend(ji);
        k_second.extend(si);
    }
    Ok(assemble(ens, model, h_vals, h_hat, k, k_jac, Some(k_second), "galerkin", Some(c)))
}

/// Dispatches on `method`, reusing precomputed `h` values and statistics.
pub fn solve_gain<T: Scalar>(
    method: &GainMethod<T>,
    ens: &ParticleEnsemble<T>,
    model: &SdeModel<T>,
    stats: &PosteriorStats<T>,
    h_vals: &[T],
) -> Result<GainField<T>> {
    match method {
        GainMethod::ExactGaussian => {
            let (h_lin, _) = model.obs.as_affine().ok_or(FpfError::NonAffineObservation)?;
            let kc = stats.cov.mul_vec(&h_lin);
            Ok(constant_field(ens, model, h_vals, stats.h_hat, &kc, "exact_gaussian"))
        }
        GainMethod::Constant => {
            let kc = constant_gain_vector(ens, h_vals, stats);
            Ok(constant_field(ens, model, h_vals, stats.h_hat, &kc, "constant"))
        }
        GainMethod::Galerkin { degree, ridge } => {
            let basis = GalerkinBasis::new(ens.dim(), *degree)?;
            galerkin_with(ens, model, &basis, *ridge, h_vals, stats.h_hat)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport<T> {
    /// `det(I + ∇vᵀ)` per particle.
    pub dets: Vec<T>,
    pub flagged: Vec<usize>,
}

/// Flags particles whose displacement map `x ↦ x + v(x)` is locally
/// non-invertible, i.e. `det(I + ∇vᵀ) ≤ eps`.
pub fn check_admissible<T: Scalar>(dim: usize, v_jac: &[T], eps: T) -> AdmissibilityReport<T> {
    let d = dim;
    let dets: Vec<T> = v_jac
        .par_chunks(d * d)
        .map(|j| {
            let m = Matrix::from_fn(d, d, |a, b| j[a * d + b] + if a == b { T::one() } else { T::zero() });
            if d == 1 {
                m[(0, 0)]
            } else {
                m.determinant()
            }
        })
        .collect();
    let flagged = dets
        .iter()
        .enumerate()
        .filter(|(_, &det)| !(det > eps))
        .map(|(i, _)| i)
        .collect();
    AdmissibilityReport { dets, flagged }
}

/// Max-norm over interior nodes of `(pK)' + (h - ĥ)p` by central differences.
pub fn gain_residual_on_grid<T: Scalar>(
    density: &GridDensity<T>,
    k_vals: &[T],
    model: &SdeModel<T>,
) -> Result<T> {
    if model.dim() != 1 {
        return Err(FpfError::InvalidArgument("grid residual is one-dimensional".into()));
    }
    if k_vals.len() != density.len() {
        return Err(FpfError::GridMismatch);
    }
    let p = density.values();
    let dx = density.dx();
    let h_hat = density.integrate(|x| model.h(&[x]));
    let mut worst = T::zero();
    for i in 1..p.len() - 1 {
        let flux = (p[i + 1] * k_vals[i + 1] - p[i - 1] * k_vals[i - 1]) / (dx + dx);
        let r = flux + (model.h(&[density.x(i)]) - h_hat) * p[i];
        worst = worst.max(r.abs());
    }
    Ok(worst)
}
