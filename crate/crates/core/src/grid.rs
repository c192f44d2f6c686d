//! One-dimensional densities tabulated on a uniform grid.

use crate::error::{FpfError, Result};
use crate::scalar::{count, lit, Scalar};

/// Nonnegative values on `n` equispaced nodes spanning `[lo, hi]`,
/// normalized so that the trapezoidal integral is one.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity<T> {
    lo: T,
    hi: T,
    values: Vec<T>,
}

impl<T: Scalar> GridDensity<T> {
    /// Tabulates `f` (clamped at zero) and normalizes.
    pub fn from_fn(lo: T, hi: T, n: usize, f: impl Fn(T) -> T) -> Result<Self> {
        if n < 3 || !(hi > lo) {
            return Err(FpfError::InvalidArgument("grid needs n ≥ 3 and hi > lo".into()));
        }
        let dx = (hi - lo) / count(n - 1);
        let values = (0..n).map(|i| f(lo + count::<T>(i) * dx).max(T::zero())).collect();
        Self::from_values(lo, hi, values)
    }

    pub fn from_values(lo: T, hi: T, values: Vec<T>) -> Result<Self> {
        if values.len() < 3 || !(hi > lo) {
            return Err(FpfError::InvalidArgument("grid needs n ≥ 3 and hi > lo".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(FpfError::InvalidArgument("grid values must be finite and nonnegative".into()));
        }
        let mut g = Self { lo, hi, values };
        g.normalize()?;
        Ok(g)
    }

    /// Standard-normal-shaped density `N(mean, var)` on `[lo, hi]`.
    pub fn gaussian(mean: T, var: T, lo: T, hi: T, n: usize) -> Result<Self> {
        Self::from_fn(lo, hi, n, |x| (-(x - mean) * (x - mean) / (var + var)).exp())
    }

    pub fn lo(&self) -> T {
        self.lo
    }

    pub fn hi(&self) -> T {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dx(&self) -> T {
        (self.hi - self.lo) / count(self.values.len() - 1)
    }

    pub fn x(&self, i: usize) -> T {
        self.lo + count::<T>(i) * self.dx()
    }

    pub fn xs(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.x(i)).collect()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.len() == other.len() && self.lo == other.lo && self.hi == other.hi
    }

    /// Trapezoidal integral of `g(x_i) p_i`.
    pub fn integrate(&self, g: impl Fn(T) -> T) -> T {
        trapezoid(self.dx(), self.values.iter().enumerate().map(|(i, &p)| g(self.x(i)) * p))
    }

    pub fn mass(&self) -> T {
        trapezoid(self.dx(), self.values.iter().copied())
    }

    pub fn mean(&self) -> T {
        self.integrate(|x| x)
    }

    pub fn variance(&self) -> T {
        let m = self.mean();
        self.integrate(|x| (x - m) * (x - m))
    }

    /// Rescales to unit mass and returns the mass before rescaling.
    pub fn normalize(&mut self) -> Result<T> {
        let z = self.mass();
        if !(z > T::zero()) || !z.is_finite() {
            return Err(FpfError::InvalidArgument("density has no mass on the grid".into()));
        }
        for v in &mut self.values {
            *v /= z;
        }
        Ok(z)
    }
}

/// Trapezoidal rule for equispaced samples.
pub fn trapezoid<T: Scalar>(dx: T, samples: impl ExactSizeIterator<Item = T>) -> T {
    let n = samples.len();
    let half = lit::<T>(0.5);
    samples
        .enumerate()
        .map(|(i, v)| if i == 0 || i + 1 == n { v * half } else { v })
        .sum::<T>()
        * dx
}
