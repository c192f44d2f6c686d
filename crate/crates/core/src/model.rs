//! Signal/observation model and the particle ensemble with its statistics.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{FpfError, Result};
use crate::linalg::Matrix;
use crate::poly::{PolyField, Polynomial};
use crate::scalar::{count, lit, Scalar};

pub(crate) type VecFn<T> = Arc<dyn Fn(&[T]) -> Vec<T> + Send + Sync>;
type ScalarFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// Signal drift `a(x)`.
#[derive(Clone)]
pub enum Drift<T> {
    /// `a(x) = F x + offset`.
    Linear { f: Matrix<T>, offset: Vec<T> },
    Poly(PolyField<T>),
    Fn(VecFn<T>),
}

impl<T: Scalar> Drift<T> {
    pub fn linear(f: Matrix<T>) -> Self {
        let d = f.rows();
        Drift::Linear {
            f,
            offset: vec![T::zero(); d],
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::linear(Matrix::zeros(dim, dim))
    }

    pub fn from_fn(f: impl Fn(&[T]) -> Vec<T> + Send + Sync + 'static) -> Self {
        Drift::Fn(Arc::new(f))
    }

    pub fn eval(&self, x: &[T]) -> Vec<T> {
        match self {
            Drift::Linear { f, offset } => f
                .mul_vec(x)
                .into_iter()
                .zip(offset)
                .map(|(a, &b)| a + b)
                .collect(),
            Drift::Poly(p) => crate::fields::VectorField::value(p, x),
            Drift::Fn(f) => f(x),
        }
    }

    /// `(F, offset)` for linear drifts.
    pub fn as_linear(&self) -> Option<(&Matrix<T>, &[T])> {
        match self {
            Drift::Linear { f, offset } => Some((f, offset)),
            _ => None,
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Drift<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Linear { f: m, offset } => write!(f, "Linear({m:?}, {offset:?})"),
            Drift::Poly(p) => write!(f, "Poly({p:?})"),
            Drift::Fn(_) => write!(f, "Fn(..)"),
        }
    }
}

/// Scalar observation function `h(x)`.
#[derive(Clone)]
pub enum Observation<T> {
    Poly(Polynomial<T>),
    Fn {
        h: ScalarFn<T>,
        grad: Option<VecFn<T>>,
    },
}

impl<T: Scalar> Observation<T> {
    pub fn poly(p: Polynomial<T>) -> Self {
        Observation::Poly(p)
    }

    pub fn from_fn(h: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        Observation::Fn {
            h: Arc::new(h),
            grad: None,
        }
    }

    pub fn with_grad(
        h: impl Fn(&[T]) -> T + Send + Sync + 'static,
        grad: impl Fn(&[T]) -> Vec<T> + Send + Sync + 'static,
    ) -> Self {
        Observation::Fn {
            h: Arc::new(h),
            grad: Some(Arc::new(grad)),
        }
    }

    pub fn eval(&self, x: &[T]) -> T {
        match self {
            Observation::Poly(p) => p.eval(x),
            Observation::Fn { h, .. } => h(x),
        }
    }

    /// `∇h`, analytic when available, otherwise a central difference with
    /// step `1e-5·max(1, |x_k|)` per coordinate.
    pub fn gradient(&self, x: &[T]) -> Vec<T> {
        match self {
            Observation::Poly(p) => p.gradient(x),
            Observation::Fn { grad: Some(g), .. } => g(x),
            Observation::Fn { h, grad: None } => {
                let mut y = x.to_vec();
                (0..x.len())
                    .map(|k| {
                        let step = lit::<T>(1e-5) * T::one().max(x[k].abs());
                        y[k] = x[k] + step;
                        let fp = h(&y);
                        y[k] = x[k] - step;
                        let fm = h(&y);
                        y[k] = x[k];
                        (fp - fm) / (step + step)
                    })
                    .collect()
            }
        }
    }

    /// `(H, c)` with `h(x) = Hᵀx + c`, when `h` is known to be affine.
    pub fn as_affine(&self) -> Option<(Vec<T>, T)> {
        match self {
            Observation::Poly(p) => p.as_affine(),
            Observation::Fn { .. } => None,
        }
    }

    /// `h + c`.
    pub fn shifted(&self, c: T) -> Self {
        match self {
            Observation::Poly(p) => Observation::Poly(p.add_constant(c)),
            Observation::Fn { h, grad } => {
                let h = h.clone();
                Observation::Fn {
                    h: Arc::new(move |x: &[T]| h(x) + c),
                    grad: grad.clone(),
                }
            }
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Observation<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observation::Poly(p) => write!(f, "Poly({p:?})"),
            Observation::Fn { grad, .. } => write!(f, "Fn(analytic_grad={})", grad.is_some()),
        }
    }
}

/// `dX = a(X)dt + σ_B dB`, `dZ = h(X)dt + dW`.
#[derive(Debug, Clone)]
pub struct SdeModel<T> {
    dim: usize,
    pub drift: Drift<T>,
    diffusion: Matrix<T>,
    diffusion_cov: Matrix<T>,
    pub obs: Observation<T>,
}

impl<T: Scalar> SdeModel<T> {
    /// Model with diffusion factor `σ_B`.
    pub fn new(drift: Drift<T>, diffusion: Matrix<T>, obs: Observation<T>) -> Result<Self> {
        let dim = diffusion.rows();
        if !diffusion.is_square() || dim == 0 {
            return Err(FpfError::InvalidModel("diffusion must be a non-empty square matrix".into()));
        }
        if let Drift::Linear { f, offset } = &drift {
            if f.rows() != dim || f.cols() != dim || offset.len() != dim {
                return Err(FpfError::DimensionMismatch { expected: dim, got: f.rows() });
            }
        }
        if let Observation::Poly(p) = &obs {
            if p.dim() != dim {
                return Err(FpfError::DimensionMismatch { expected: dim, got: p.dim() });
            }
        }
        let diffusion_cov = diffusion.matmul(&diffusion.transpose());
        Ok(Self {
            dim,
            drift,
            diffusion,
            diffusion_cov,
            obs,
        })
    }

    /// Model specified through `Q = σ_B σ_Bᵀ` directly; `σ_B` is a
    /// symmetric square root of the PSD part of `Q`.
    pub fn with_diffusion_cov(drift: Drift<T>, q: Matrix<T>, obs: Observation<T>) -> Result<Self> {
        let sigma = q.psd_factor();
        let mut m = Self::new(drift, sigma, obs)?;
        m.diffusion_cov = q;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diffusion(&self) -> &Matrix<T> {
        &self.diffusion
    }

    pub fn diffusion_cov(&self) -> &Matrix<T> {
        &self.diffusion_cov
    }

    pub fn drift_at(&self, x: &[T]) -> Vec<T> {
        self.drift.eval(x)
    }

    pub fn h(&self, x: &[T]) -> T {
        self.obs.eval(x)
    }

    pub fn grad_h(&self, x: &[T]) -> Vec<T> {
        self.obs.gradient(x)
    }

    pub fn with_obs(&self, obs: Observation<T>) -> Self {
        Self {
            obs,
            ..self.clone()
        }
    }
}

/// Lists violated model invariants; an empty report means the model is valid.
pub fn validate_model<T: Scalar>(model: &SdeModel<T>) -> Vec<String> {
    let mut report = Vec::new();
    if !model.diffusion.all_finite() || !model.diffusion_cov.all_finite() {
        report.push("diffusion non-finite".to_string());
    } else if model.diffusion_cov.min_eigenvalue() < lit(-1e-10) {
        report.push("diffusion not PSD".to_string());
    }
    let d = model.dim;
    let mut probes = vec![vec![T::zero(); d]];
    for k in 0..d {
        for s in [-1.0, 1.0] {
            let mut p = vec![T::zero(); d];
            p[k] = lit(s);
            probes.push(p);
        }
    }
    if probes
        .iter()
        .any(|p| model.drift_at(p).iter().any(|v| !v.is_finite()))
    {
        report.push("drift non-finite".to_string());
    }
    if probes.iter().any(|p| !model.h(p).is_finite()) {
        report.push("obs non-finite".to_string());
    }
    report
}

/// Named models shipped with the library.
pub mod presets {
    use super::*;

    pub const NAMES: [&str; 4] = ["linear1d", "linear2d", "cubic-sensor", "constant-signal"];

    /// `a(x) = -x`, `σ_B = 1`, `h(x) = x`.
    pub fn linear1d<T: Scalar>() -> SdeModel<T> {
        SdeModel::new(
            Drift::linear(Matrix::from_diag(&[-T::one()])),
            Matrix::identity(1),
            Observation::poly(Polynomial::affine(&[T::one()], T::zero())),
        )
        .expect("preset is well formed")
    }

    /// Damped coupled pair observed through its first coordinate.
    pub fn linear2d<T: Scalar>() -> SdeModel<T> {
        let f = Matrix::from_rows(&[vec![lit(-1.0), lit(0.5)], vec![T::zero(), lit(-0.5)]]);
        SdeModel::new(
            Drift::linear(f),
            Matrix::identity(2),
            Observation::poly(Polynomial::affine(&[T::one(), T::zero()], T::zero())),
        )
        .expect("preset is well formed")
    }

    /// Brownian signal with `h(x) = x³`.
    pub fn cubic_sensor<T: Scalar>() -> SdeModel<T> {
        SdeModel::new(
            Drift::zero(1),
            Matrix::identity(1),
            Observation::poly(Polynomial::monomial(vec![3], T::one())),
        )
        .expect("preset is well formed")
    }

    /// Frozen signal (`a = 0`, `σ_B = 0`) with `h(x) = x`.
    pub fn constant_signal<T: Scalar>() -> SdeModel<T> {
        SdeModel::new(
            Drift::zero(1),
            Matrix::zeros(1, 1),
            Observation::poly(Polynomial::affine(&[T::one()], T::zero())),
        )
        .expect("preset is well formed")
    }

    pub fn by_name<T: Scalar>(name: &str) -> Option<SdeModel<T>> {
        match name {
            "linear1d" => Some(linear1d()),
            "linear2d" => Some(linear2d()),
            "cubic-sensor" => Some(cubic_sensor()),
            "constant-signal" => Some(constant_signal()),
            _ => None,
        }
    }
}

#[inline]
pub(crate) fn std_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    lit(rng.sample::<f64, _>(StandardNormal))
}

/// `N` particles in `R^d`, stored row-major, each with its own RNG stream.
///
/// Stream `i` of the ChaCha generator seeded with `seed` belongs to slot `i`
/// for the lifetime of the ensemble, so results do not depend on how the
/// particle loop is scheduled.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble<T> {
    dim: usize,
    states: Vec<T>,
    pub time: T,
    rngs: Vec<ChaCha8Rng>,
}

impl<T: Scalar> ParticleEnsemble<T> {
    pub fn new(dim: usize, states: Vec<T>, seed: u64) -> Result<Self> {
        if dim == 0 || !states.len().is_multiple_of(dim) {
            return Err(FpfError::InvalidArgument("state buffer not a multiple of dim".into()));
        }
        let n = states.len() / dim;
        if n < 2 {
            return Err(FpfError::InvalidArgument("ensemble needs N ≥ 2".into()));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(FpfError::InvalidArgument("non-finite particle state".into()));
        }
        let rngs = (0..n)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(i as u64);
                r
            })
            .collect();
        Ok(Self {
            dim,
            states,
            time: T::zero(),
            rngs,
        })
    }

    pub fn from_particles(particles: &[Vec<T>], seed: u64) -> Result<Self> {
        let dim = particles.first().map_or(0, Vec::len);
        Self::new(dim, particles.concat(), seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[T] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> &[T] {
        &self.states
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, T> {
        self.states.chunks_exact(self.dim)
    }

    pub fn to_vecs(&self) -> Vec<Vec<T>> {
        self.iter().map(<[T]>::to_vec).collect()
    }

    /// Relabels particles together with their RNG streams: slot `k` of the
    /// result holds what slot `perm[k]` held before.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut states = Vec::with_capacity(self.states.len());
        for &p in perm {
            states.extend_from_slice(self.particle(p));
        }
        Self {
            dim: self.dim,
            states,
            time: self.time,
            rngs: perm.iter().map(|&p| self.rngs[p].clone()).collect(),
        }
    }


    /// Parallel iterator over `(index, state, rng)` triples.
    pub(crate) fn par_slots_mut(
        &mut self,
    ) -> impl IndexedParallelIterator<Item = (usize, (&mut [T], &mut ChaCha8Rng))> {
        self.states
            .par_chunks_mut(self.dim)
            .zip(self.rngs.par_iter_mut())
            .enumerate()
    }

    pub fn all_finite(&self) -> bool {
        self.states.iter().all(|v| v.is_finite())
    }

    /// Slot `k` takes the state of particle `idx[k]`; RNG streams stay with
    /// their slots.
    pub(crate) fn resample_from(&mut self, idx: &[usize]) {
        let mut states = Vec::with_capacity(self.states.len());
        for &i in idx {
            states.extend_from_slice(self.particle(i));
        }
        self.states = states;
    }
}

/// Draws `n` particles from `N(mean, cov)` deterministically from `seed`.
pub fn sample_initial_ensemble<T: Scalar>(
    n: usize,
    mean: &[T],
    cov: &Matrix<T>,
    seed: u64,
) -> Result<ParticleEnsemble<T>> {
    let d = mean.len();
    if cov.rows() != d || !cov.is_square() {
        return Err(FpfError::DimensionMismatch { expected: d, got: cov.rows() });
    }
    if !cov.all_finite() || !cov.is_symmetric(lit(1e-12)) || cov.min_eigenvalue() < lit(-1e-10) {
        return Err(FpfError::CovarianceNotPsd);
    }
    let factor = cov.cholesky().unwrap_or_else(|| cov.psd_factor());
    let mut ens = ParticleEnsemble::new(d, vec![T::zero(); n * d], seed)?;
    ens.par_slots_mut().for_each(|(_, (x, rng))| {
        let z: Vec<T> = (0..d).map(|_| std_normal(rng)).collect();
        let dx = factor.mul_vec(&z);
        for k in 0..d {
            x[k] = mean[k] + dx[k];
        }
    });
    Ok(ens)
}

/// Empirical posterior summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStats<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
    pub h_hat: T,
}

/// `h(Xⁱ)` for every particle, in index order.
pub fn h_values<T: Scalar>(ens: &ParticleEnsemble<T>, model: &SdeModel<T>) -> Vec<T> {
    ens.states()
        .par_chunks(ens.dim())
        .map(|x| model.h(x))
        .collect()
}

/// Posterior moments (covariance with divisor `N-1`) and `ĥ` from precomputed `h` values.
pub fn stats_from_h<T: Scalar>(ens: &ParticleEnsemble<T>, h_vals: &[T]) -> PosteriorStats<T> {
    let d = ens.dim();
    let n = ens.len();
    let mut mean = vec![T::zero(); d];
    for x in ens.iter() {
        for k in 0..d {
            mean[k] += x[k];
        }
    }
    for m in &mut mean {
        *m /= count(n);
    }
    let mut cov = Matrix::zeros(d, d);
    for x in ens.iter() {
        for a in 0..d {
            let da = x[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (x[b] - mean[b]);
            }
        }
    }
    let denom = count::<T>(n - 1);
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let h_hat = h_vals.iter().copied().sum::<T>() / count(n);
    PosteriorStats { mean, cov, h_hat }
}

pub fn ensemble_stats<T: Scalar>(ens: &ParticleEnsemble<T>, model: &SdeModel<T>) -> PosteriorStats<T> {
    stats_from_h(ens, &h_values(ens, model))
}
