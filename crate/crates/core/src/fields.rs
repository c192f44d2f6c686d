//! Smooth fields and log-densities with their derivatives.
//!
//! Layout conventions used throughout:
//! * `jacobian_t(x)[(i, j)] = ∂v_j/∂x_i`, i.e. the matrix `∇vᵀ`;
//! * `second(x)[(l*d + i)*d + j] = ∂²v_l/∂x_i∂x_j`;
//! * `third(x)[((l*d + i)*d + j)*d + k] = ∂³v_l/∂x_i∂x_j∂x_k`.

use std::sync::Arc;

use crate::linalg::{dot, Matrix};
use crate::scalar::{lit, Scalar};

pub trait ScalarField<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[T]) -> T;
    fn gradient(&self, x: &[T]) -> Vec<T>;
    fn hessian(&self, x: &[T]) -> Matrix<T>;
    /// `[(l*d + i)*d + j] = ∂³f/∂x_l∂x_i∂x_j`.
    fn third(&self, x: &[T]) -> Vec<T>;
}

pub trait VectorField<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[T]) -> Vec<T>;
    fn jacobian_t(&self, x: &[T]) -> Matrix<T>;
    fn second(&self, x: &[T]) -> Vec<T>;
    fn third(&self, x: &[T]) -> Vec<T>;

    /// `∇ᵀv`.
    fn divergence(&self, x: &[T]) -> T {
        self.jacobian_t(x).trace()
    }

    /// `∇(∇ᵀv)` as a column vector.
    fn divergence_gradient(&self, x: &[T]) -> Vec<T> {
        let d = self.dim();
        let s = self.second(x);
        (0..d)
            .map(|r| (0..d).map(|l| s[(l * d + l) * d + r]).sum())
            .collect()
    }

    /// `∇²(∇ᵀv)`.
    fn divergence_hessian(&self, x: &[T]) -> Matrix<T> {
        let d = self.dim();
        let t = self.third(x);
        Matrix::from_fn(d, d, |r, s| {
            (0..d).map(|l| t[((l * d + l) * d + r) * d + s]).sum()
        })
    }
}

/// Vector field given by a closure, differentiated by central differences.
#[derive(Clone)]
pub struct ClosureField<T> {
    dim: usize,
    f: crate::model::VecFn<T>,
    step: T,
}

impl<T: Scalar> ClosureField<T> {
    pub fn new(dim: usize, step: T, f: impl Fn(&[T]) -> Vec<T> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            f: Arc::new(f),
            step,
        }
    }

    fn shifted(&self, x: &[T], k: usize, delta: T) -> Vec<T> {
        let mut y = x.to_vec();
        y[k] += delta;
        y
    }
}

impl<T: Scalar> VectorField<T> for ClosureField<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[T]) -> Vec<T> {
        (self.f)(x)
    }

    fn jacobian_t(&self, x: &[T]) -> Matrix<T> {
        let d = self.dim;
        let two_h = lit::<T>(2.0) * self.step;
        let mut m = Matrix::zeros(d, d);
        for i in 0..d {
            let fp = (self.f)(&self.shifted(x, i, self.step));
            let fm = (self.f)(&self.shifted(x, i, -self.step));
            for j in 0..d {
                m[(i, j)] = (fp[j] - fm[j]) / two_h;
            }
        }
        m
    }

    fn second(&self, x: &[T]) -> Vec<T> {
        let d = self.dim;
        let two_h = lit::<T>(2.0) * self.step;
        let mut out = vec![T::zero(); d * d * d];
        for j in 0..d {
            let jp = self.jacobian_t(&self.shifted(x, j, self.step));
            let jm = self.jacobian_t(&self.shifted(x, j, -self.step));
            for l in 0..d {
                for i in 0..d {
                    out[(l * d + i) * d + j] = (jp[(i, l)] - jm[(i, l)]) / two_h;
                }
            }
        }
        out
    }

    fn third(&self, x: &[T]) -> Vec<T> {
        let d = self.dim;
        let two_h = lit::<T>(2.0) * self.step;
        let mut out = vec![T::zero(); d * d * d * d];
        for k in 0..d {
            let sp = self.second(&self.shifted(x, k, self.step));
            let sm = self.second(&self.shifted(x, k, -self.step));
            for idx in 0..d * d * d {
                out[idx * d + k] = (sp[idx] - sm[idx]) / two_h;
            }
        }
        out
    }
}

/// A (possibly unnormalized) positive density described through `log p`.
pub trait LogDensity<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[T]) -> T;
    fn grad_log(&self, x: &[T]) -> Vec<T>;
    fn hess_log(&self, x: &[T]) -> Matrix<T>;

    /// `[(l*d + i)*d + j] = ∂³ log p/∂x_l∂x_i∂x_j`; central differences of
    /// the Hessian unless overridden.
    fn third_log(&self, x: &[T]) -> Vec<T> {
        let d = self.dim();
        let h = lit::<T>(1e-4);
        let mut out = vec![T::zero(); d * d * d];
        for l in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[l] += h;
            xm[l] -= h;
            let hp = self.hess_log(&xp);
            let hm = self.hess_log(&xm);
            for i in 0..d {
                for j in 0..d {
                    out[(l * d + i) * d + j] = (hp[(i, j)] - hm[(i, j)]) / (h + h);
                }
            }
        }
        out
    }

    fn density(&self, x: &[T]) -> T {
        self.log_density(x).exp()
    }

    /// `∇p = p ∇log p`.
    fn grad_density(&self, x: &[T]) -> Vec<T> {
        let p = self.density(x);
        self.grad_log(x).into_iter().map(|g| g * p).collect()
    }

    /// `∇²p = p (∇²log p + ∇log p ∇ᵀlog p)`.
    fn hess_density(&self, x: &[T]) -> Matrix<T> {
        let p = self.density(x);
        let g = self.grad_log(x);
        let h = self.hess_log(x);
        let d = self.dim();
        Matrix::from_fn(d, d, |i, j| p * (h[(i, j)] + g[i] * g[j]))
    }

    /// Third derivatives of `p` itself, same layout as [`LogDensity::third_log`].
    fn third_density(&self, x: &[T]) -> Vec<T> {
        let d = self.dim();
        let p = self.density(x);
        let g = self.grad_log(x);
        let h = self.hess_log(x);
        let t = self.third_log(x);
        let mut out = vec![T::zero(); d * d * d];
        for l in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let v = t[(l * d + i) * d + j]
                        + g[l] * (h[(i, j)] + g[i] * g[j])
                        + h[(l, i)] * g[j]
                        + g[i] * h[(l, j)];
                    out[(l * d + i) * d + j] = p * v;
                }
            }
        }
        out
    }
}

/// Multivariate normal density.
#[derive(Debug, Clone)]
pub struct GaussianDensity<T> {
    mean: Vec<T>,
    cov: Matrix<T>,
    precision: Matrix<T>,
    log_norm: T,
}

impl<T: Scalar> GaussianDensity<T> {
    /// Returns `None` unless `cov` is symmetric positive definite.
    pub fn new(mean: Vec<T>, cov: Matrix<T>) -> Option<Self> {
        let d = mean.len();
        if cov.rows() != d || !cov.is_square() {
            return None;
        }
        let chol = cov.cholesky()?;
        let precision = cov.inverse()?;
        let log_det: T = (0..d).map(|i| chol[(i, i)].ln()).sum::<T>() * lit(2.0);
        let log_norm = -lit::<T>(0.5) * (T::from_usize(d).unwrap() * (lit::<T>(2.0) * T::PI()).ln() + log_det);
        Some(Self {
            mean,
            cov,
            precision,
            log_norm,
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![T::zero(); dim], Matrix::identity(dim)).expect("identity covariance")
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix<T> {
        &self.cov
    }

    fn centered(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.mean).map(|(&a, &m)| a - m).collect()
    }
}

impl<T: Scalar> LogDensity<T> for GaussianDensity<T> {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[T]) -> T {
        let c = self.centered(x);
        self.log_norm - lit::<T>(0.5) * dot(&c, &self.precision.mul_vec(&c))
    }

    fn grad_log(&self, x: &[T]) -> Vec<T> {
        let c = self.centered(x);
        self.precision.mul_vec(&c).into_iter().map(|v| -v).collect()
    }

    fn hess_log(&self, _x: &[T]) -> Matrix<T> {
        self.precision.scale(-T::one())
    }

    fn third_log(&self, _x: &[T]) -> Vec<T> {
        let d = self.dim();
        vec![T::zero(); d * d * d]
    }
}

/// Unnormalized density `exp(q(x))` with a polynomial exponent `q`.
#[derive(Debug, Clone)]
pub struct PolyLogDensity<T> {
    log_p: crate::poly::Polynomial<T>,
}

impl<T: Scalar> PolyLogDensity<T> {
    pub fn new(log_p: crate::poly::Polynomial<T>) -> Self {
        Self { log_p }
    }
}

impl<T: Scalar> LogDensity<T> for PolyLogDensity<T> {
    fn dim(&self) -> usize {
        self.log_p.dim()
    }
    fn log_density(&self, x: &[T]) -> T {
        self.log_p.eval(x)
    }
    fn grad_log(&self, x: &[T]) -> Vec<T> {
        self.log_p.gradient(x)
    }
    fn hess_log(&self, x: &[T]) -> Matrix<T> {
        self.log_p.hessian(x)
    }
    fn third_log(&self, x: &[T]) -> Vec<T> {
        self.log_p.third_derivatives(x)
    }
}

/// Unnormalized `p(x) ∝ exp(-sqrt(1 + |x|²))`; `|∇log p| < 1` everywhere.
#[derive(Debug, Clone, Copy)]
pub struct SoftLaplaceDensity {
    pub dim: usize,
}

impl<T: Scalar> LogDensity<T> for SoftLaplaceDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[T]) -> T {
        -(T::one() + dot(x, x)).sqrt()
    }

    fn grad_log(&self, x: &[T]) -> Vec<T> {
        let r = (T::one() + dot(x, x)).sqrt();
        x.iter().map(|&xi| -xi / r).collect()
    }

    fn hess_log(&self, x: &[T]) -> Matrix<T> {
        let r = (T::one() + dot(x, x)).sqrt();
        let r3 = r * r * r;
        let d = x.len();
        Matrix::from_fn(d, d, |i, j| {
            let delta = if i == j { T::one() } else { T::zero() };
            -delta / r + x[i] * x[j] / r3
        })
    }
}
