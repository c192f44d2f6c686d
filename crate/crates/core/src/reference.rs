//! Oracle filters: Euler-discretized Kalman–Bucy, bootstrap particle filter
//! and a 1-D grid solver for the Kushner–Stratonovich equation.

use rand::Rng;

use crate::error::{FpfError, Result};
use crate::fpf::TraceRow;
use crate::grid::GridDensity;
use crate::linalg::Matrix;
use crate::model::{h_values, sample_initial_ensemble, ParticleEnsemble, PosteriorStats, SdeModel};
use crate::scalar::{count, lit, Scalar};
use crate::sde::{euler_maruyama_step, ObservationRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
}

/// `m ← m + (Fm + b)dt + PH(dz - (Hᵀm + c)dt)`,
/// `P ← P + (FP + PFᵀ + σσᵀ - PHHᵀP)dt`.
pub fn kalman_bucy_step<T: Scalar>(
    state: &KalmanState<T>,
    model: &SdeModel<T>,
    dt: T,
    dz: T,
) -> Result<KalmanState<T>> {
    let (f, offset) = model
        .drift
        .as_linear()
        .ok_or_else(|| FpfError::InvalidModel("Kalman–Bucy requires a linear drift".into()))?;
    let (h, c) = model.obs.as_affine().ok_or(FpfError::NonAffineObservation)?;
    let p = &state.cov;
    let ph = p.mul_vec(&h);
    let innov = dz - (crate::linalg::dot(&h, &state.mean) + c) * dt;
    let fm = f.mul_vec(&state.mean);
    let d = state.mean.len();
    let mean = (0..d)
        .map(|k| state.mean[k] + (fm[k] + offset[k]) * dt + ph[k] * innov)
        .collect();
    let fp = f.matmul(p);
    let rate = Matrix::from_fn(d, d, |a, b| {
        fp[(a, b)] + fp[(b, a)] + model.diffusion_cov()[(a, b)] - ph[a] * ph[b]
    });
    let mut cov = p.add(&rate.scale(dt));
    cov.symmetrize();
    if !cov.all_finite() || cov.min_eigenvalue() < lit(-1e-10) {
        return Err(FpfError::RiccatiUnstable);
    }
    Ok(KalmanState { mean, cov })
}

/// Kalman–Bucy trace over a record, prior row first.
pub fn run_kalman_bucy<T: Scalar>(
    model: &SdeModel<T>,
    observations: &[ObservationRecord<T>],
    dt: T,
    init: KalmanState<T>,
) -> Result<Vec<(T, KalmanState<T>)>> {
    let mut out = Vec::with_capacity(observations.len() + 1);
    out.push((T::zero(), init.clone()));
    let mut s = init;
    for o in observations {
        s = kalman_bucy_step(&s, model, dt, o.dz)?;
        out.push((o.time, s.clone()));
    }
    Ok(out)
}

/// Multiplies weights by `exp(h dz - ½h² dt)` in the log domain and renormalizes.
pub fn bootstrap_reweight<T: Scalar>(weights: &[T], h_vals: &[T], dz: T, dt: T) -> Result<Vec<T>> {
    let half = lit::<T>(0.5);
    let logw: Vec<T> = weights
        .iter()
        .zip(h_vals)
        .map(|(&w, &h)| w.ln() + h * dz - half * h * h * dt)
        .collect();
    let top = logw
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(T::neg_infinity(), T::max);
    if !top.is_finite() {
        return Err(FpfError::WeightCollapse);
    }
    let mut w: Vec<T> = logw
        .iter()
        .map(|&l| if l.is_finite() { (l - top).exp() } else { T::zero() })
        .collect();
    let z: T = w.iter().copied().sum();
    if !(z > T::zero()) || !z.is_finite() {
        return Err(FpfError::WeightCollapse);
    }
    w.iter_mut().for_each(|v| *v /= z);
    Ok(w)
}

pub fn effective_sample_size<T: Scalar>(weights: &[T]) -> T {
    T::one() / weights.iter().map(|&w| w * w).sum::<T>()
}

/// Systematic resampling indices for normalized `weights`, with offset `u0 ∈ [0, 1)`.
pub fn systematic_indices<T: Scalar>(weights: &[T], u0: T) -> Vec<usize> {
    let n = weights.len();
    let step = T::one() / count(n);
    let mut idx = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for k in 0..n {
        let target = (u0 + count::<T>(k)) * step;
        while target > cum && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        idx.push(j);
    }
    idx
}

/// Propagates and reweights, then resamples systematically when `ESS < N/2`.
/// Returns whether resampling happened.
pub fn bootstrap_pf_step<T: Scalar, R: Rng + ?Sized>(
    ens: &mut ParticleEnsemble<T>,
    weights: &mut Vec<T>,
    model: &SdeModel<T>,
    dt: T,
    dz: T,
    rng: &mut R,
) -> Result<bool> {
    euler_maruyama_step(ens, model, dt)?;
    let h_vals = h_values(ens, model);
    *weights = bootstrap_reweight(weights, &h_vals, dz, dt)?;
    let n = weights.len();
    if effective_sample_size(weights) < count::<T>(n) * lit(0.5) {
        let u0 = lit::<T>(rng.random::<f64>());
        let idx = systematic_indices(weights, u0);
        ens.resample_from(&idx);
        *weights = vec![T::one() / count(n); n];
        return Ok(true);
    }
    Ok(false)
}

/// Weighted mean and covariance (divisor one, i.e. the weighted second moment).
pub fn weighted_stats<T: Scalar>(ens: &ParticleEnsemble<T>, weights: &[T], model: &SdeModel<T>) -> PosteriorStats<T> {
    let d = ens.dim();
    let mut mean = vec![T::zero(); d];
    for (x, &w) in ens.iter().zip(weights) {
        for k in 0..d {
            mean[k] += w * x[k];
        }
    }
    let mut cov = Matrix::zeros(d, d);
    for (x, &w) in ens.iter().zip(weights) {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += w * (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    cov.symmetrize();
    let h_hat = h_values(ens, model).iter().zip(weights).map(|(&h, &w)| h * w).sum();
    PosteriorStats { mean, cov, h_hat }
}

/// Bootstrap particle filter trace, prior row first.
pub fn run_bootstrap<T: Scalar>(
    model: &SdeModel<T>,
    observations: &[ObservationRecord<T>],
    dt: T,
    n: usize,
    seed: u64,
    init_mean: &[T],
    init_cov: &Matrix<T>,
) -> Result<Vec<TraceRow<T>>> {
    use rand::SeedableRng;
    let mut ens = sample_initial_ensemble(n, init_mean, init_cov, seed)?;
    let mut weights = vec![T::one() / count(n); n];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut rows = vec![TraceRow::from_stats(T::zero(), T::zero(), &weighted_stats(&ens, &weights, model), 0)];
    for o in observations {
        let resampled = bootstrap_pf_step(&mut ens, &mut weights, model, dt, o.dz, &mut rng)?;
        rows.push(TraceRow::from_stats(o.time, o.dz, &weighted_stats(&ens, &weights, model), usize::from(resampled)));
    }
    Ok(rows)
}

/// One operator-split step of the 1-D Kushner–Stratonovich equation:
/// a conservative explicit Fokker–Planck step (substepped for stability,
/// zero-flux boundaries), then the multiplicative likelihood update
/// `p ← p·exp(h dz - ½h² dt)` and renormalization.
pub fn kushner_grid_step<T: Scalar>(
    density: &GridDensity<T>,
    model: &SdeModel<T>,
    dt: T,
    dz: T,
) -> Result<GridDensity<T>> {
    if model.dim() != 1 {
        return Err(FpfError::InvalidArgument("grid solver is one-dimensional".into()));
    }
    let n = density.len();
    let dx = density.dx();
    let q = model.diffusion_cov()[(0, 0)];
    let half = lit::<T>(0.5);
    let xs = density.xs();
    // drift at cell faces
    let a_face: Vec<T> = (0..n - 1)
        .map(|i| model.drift_at(&[(xs[i] + xs[i + 1]) * half])[0])
        .collect();
    let a_max = a_face.iter().fold(T::zero(), |m, a| m.max(a.abs()));
    let mut limit = T::infinity();
    if q > T::zero() {
        limit = limit.min(lit::<T>(0.4) * dx * dx / q);
    }
    if a_max > T::zero() {
        limit = limit.min(half * dx / a_max);
    }
    let substeps = if limit.is_finite() {
        (dt / limit).ceil().to_usize().unwrap_or(1).max(1)
    } else {
        1
    };
    let tau = dt / count(substeps);
    let mut p = density.values().to_vec();
    let moving = q > T::zero() || a_max > T::zero();
    if moving {
        let mut flux = vec![T::zero(); n - 1];
        for _ in 0..substeps {
            for i in 0..n - 1 {
                let a = a_face[i];
                let peclet = if q > T::zero() { a.abs() * dx / (half * q) } else { T::infinity() };
                let adv = if peclet > lit(2.0) {
                    if a > T::zero() { a * p[i] } else { a * p[i + 1] }
                } else {
                    a * (p[i] + p[i + 1]) * half
                };
                flux[i] = adv - half * q * (p[i + 1] - p[i]) / dx;
            }
            p[0] -= tau * flux[0] / (half * dx);
            for i in 1..n - 1 {
                p[i] -= tau * (flux[i] - flux[i - 1]) / dx;
            }
            p[n - 1] += tau * flux[n - 2] / (half * dx);
        }
    }
    if p.iter().any(|&v| v < lit(-1e-12) || !v.is_finite()) {
        return Err(FpfError::Instability);
    }
    let logl: Vec<T> = xs
        .iter()
        .map(|&x| {
            let h = model.h(&[x]);
            h * dz - half * h * h * dt
        })
        .collect();
    let top = logl.iter().copied().fold(T::neg_infinity(), T::max);
    for (v, l) in p.iter_mut().zip(&logl) {
        *v = v.max(T::zero()) * (*l - top).exp();
    }
    GridDensity::from_values(density.lo(), density.hi(), p).map_err(|_| FpfError::Instability)
}

/// `(t, mean, variance)` rows and the densities kept along the way.
pub type KushnerRun<T> = (Vec<(T, T, T)>, Vec<GridDensity<T>>);

/// Grid posterior trace `(t, mean, variance)`, prior row first, plus the
/// densities at the requested step indices.
pub fn run_kushner<T: Scalar>(
    model: &SdeModel<T>,
    observations: &[ObservationRecord<T>],
    dt: T,
    init: GridDensity<T>,
    keep_steps: &[usize],
) -> Result<KushnerRun<T>> {
    let mut rows = vec![(T::zero(), init.mean(), init.variance())];
    let mut kept = Vec::new();
    if keep_steps.contains(&0) {
        kept.push(init.clone());
    }
    let mut g = init;
    for (k, o) in observations.iter().enumerate() {
        g = kushner_grid_step(&g, model, dt, o.dz)?;
        rows.push((o.time, g.mean(), g.variance()));
        if keep_steps.contains(&(k + 1)) {
            kept.push(g.clone());
        }
    }
    Ok((rows, kept))
}
