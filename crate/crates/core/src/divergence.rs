//! f-divergences between grid densities, and a 1-D kernel density estimate
//! to put ensembles on a grid.

use rayon::prelude::*;

use crate::error::{FpfError, Result};
use crate::grid::{trapezoid, GridDensity};
use crate::model::ParticleEnsemble;
use crate::scalar::{count, lit, Scalar};

/// Smoothing width of the total-variation generator.
pub const TV_DELTA: f64 = 1e-6;

/// Convex generators with `f(1) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FGenerator {
    /// `s log s`
    Kl,
    /// `(√s - 1)²`
    Hellinger,
    /// `½(√((s-1)² + δ²) - δ)`
    SmoothTv,
}

impl FGenerator {
    pub const ALL: [FGenerator; 3] = [FGenerator::Kl, FGenerator::Hellinger, FGenerator::SmoothTv];

    pub fn name(self) -> &'static str {
        match self {
            FGenerator::Kl => "kl",
            FGenerator::Hellinger => "hellinger",
            FGenerator::SmoothTv => "tv",
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }

    pub fn f<T: Scalar>(self, s: T) -> T {
        let one = T::one();
        match self {
            FGenerator::Kl if s == T::zero() => T::zero(),
            FGenerator::Kl => s * s.ln(),
            FGenerator::Hellinger => (s.sqrt() - one) * (s.sqrt() - one),
            FGenerator::SmoothTv => {
                let d = lit::<T>(TV_DELTA);
                lit::<T>(0.5) * (((s - one) * (s - one) + d * d).sqrt() - d)
            }
        }
    }

    pub fn f_prime<T: Scalar>(self, s: T) -> T {
        let one = T::one();
        match self {
            FGenerator::Kl => s.ln() + one,
            FGenerator::Hellinger => one - one / s.sqrt(),
            FGenerator::SmoothTv => {
                let d = lit::<T>(TV_DELTA);
                lit::<T>(0.5) * (s - one) / ((s - one) * (s - one) + d * d).sqrt()
            }
        }
    }

    pub fn f_second<T: Scalar>(self, s: T) -> T {
        let one = T::one();
        match self {
            FGenerator::Kl => one / s,
            FGenerator::Hellinger => lit::<T>(0.5) / (s * s.sqrt()),
            FGenerator::SmoothTv => {
                let d = lit::<T>(TV_DELTA);
                let r = (s - one) * (s - one) + d * d;
                lit::<T>(0.5) * d * d / (r * r.sqrt())
            }
        }
    }

    /// `lim f(s)/s` as `s → ∞`.
    pub fn limit_slope<T: Scalar>(self) -> T {
        match self {
            FGenerator::Kl => T::infinity(),
            FGenerator::Hellinger => T::one(),
            FGenerator::SmoothTv => lit(0.5),
        }
    }
}

/// Checks `f(1) = 0` and `f″ > 0` on a few probes for every registered generator.
pub fn verify_registry() -> Result<()> {
    for g in FGenerator::ALL {
        if g.f(1.0f64) != 0.0 {
            return Err(FpfError::InvalidArgument(format!("generator {} has f(1) ≠ 0", g.name())));
        }
        for s in [0.1, 0.5, 1.0, 2.0, 10.0] {
            if !(g.f_second(s) > 0.0) {
                return Err(FpfError::InvalidArgument(format!("generator {} is not strictly convex", g.name())));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceResult<T> {
    pub generator: &'static str,
    pub value: T,
    /// Trapezoid on the full grid against the trapezoid on every other node.
    pub quad_error: T,
}

fn integrand<T: Scalar>(g: FGenerator, a: T, b: T) -> T {
    let tiny = lit::<T>(1e-300);
    if b < tiny {
        if a < tiny { T::zero() } else { a * g.limit_slope::<T>() }
    } else {
        b * g.f(a / b)
    }
}

/// `∫ p₂ f(p₁/p₂)` by the trapezoidal rule.
pub fn f_divergence<T: Scalar>(p1: &GridDensity<T>, p2: &GridDensity<T>, gen: FGenerator) -> Result<DivergenceResult<T>> {
    if !p1.same_grid(p2) {
        return Err(FpfError::GridMismatch);
    }
    let vals: Vec<T> = p1.values().iter().zip(p2.values()).map(|(&a, &b)| integrand(gen, a, b)).collect();
    let value = trapezoid(p1.dx(), vals.iter().copied());
    let m = (vals.len() - 1) / 2 * 2 + 1;
    let fine = trapezoid(p1.dx(), vals[..m].iter().copied());
    let coarse = trapezoid(p1.dx() + p1.dx(), vals[..m].iter().step_by(2).copied());
    let quad_error = if value.is_finite() { (fine - coarse).abs() / lit(3.0) } else { T::zero() };
    Ok(DivergenceResult { generator: gen.name(), value, quad_error })
}

/// Silverman's rule `1.06 σ̂ N^{-1/5}`.
pub fn silverman_bandwidth<T: Scalar>(samples: &[T]) -> Result<T> {
    let n = samples.len();
    if n < 2 {
        return Err(FpfError::DegenerateEnsemble);
    }
    let mean = samples.iter().copied().sum::<T>() / count(n);
    let var = samples.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / count(n - 1);
    if !(var > T::zero()) {
        return Err(FpfError::DegenerateEnsemble);
    }
    Ok(lit::<T>(1.06) * var.sqrt() * count::<T>(n).powf(lit(-0.2)))
}

const KDE_BLOCK: usize = 1024;

/// Gaussian KDE of a 1-D ensemble on `n` nodes over `[lo, hi]`, renormalized.
/// Kernels are truncated at eight bandwidths.
pub fn kde_density<T: Scalar>(
    ens: &ParticleEnsemble<T>,
    lo: T,
    hi: T,
    n: usize,
    bandwidth: Option<T>,
) -> Result<GridDensity<T>> {
    if ens.dim() != 1 {
        return Err(FpfError::InvalidArgument("KDE is one-dimensional".into()));
    }
    if n < 3 || !(hi > lo) {
        return Err(FpfError::InvalidArgument("grid needs n ≥ 3 and hi > lo".into()));
    }
    let xs = ens.states();
    let b = match bandwidth {
        Some(b) if b > T::zero() => b,
        Some(_) => return Err(FpfError::InvalidArgument("bandwidth must be positive".into())),
        None => silverman_bandwidth(xs)?,
    };
    let dx = (hi - lo) / count(n - 1);
    let reach = lit::<T>(8.0) * b;
    let half = lit::<T>(0.5);
    let partial: Vec<Vec<T>> = xs
        .par_chunks(KDE_BLOCK)
        .map(|block| {
            let mut acc = vec![T::zero(); n];
            for &x in block {
                let first = ((x - reach - lo) / dx).ceil().max(T::zero());
                let last = ((x + reach - lo) / dx).floor().min(count(n - 1));
                if first > last {
                    continue;
                }
                let (i0, i1) = (first.to_usize().unwrap_or(0), last.to_usize().unwrap_or(0));
                for (i, a) in acc.iter_mut().enumerate().take(i1 + 1).skip(i0) {
                    let z = (lo + count::<T>(i) * dx - x) / b;
                    *a += (-half * z * z).exp();
                }
            }
            acc
        })
        .collect();
    let mut total = vec![T::zero(); n];
    for p in partial {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    GridDensity::from_values(lo, hi, total).map_err(|_| FpfError::DegenerateEnsemble)
}
