//! Euler–Maruyama propagation and synthetic observations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{FpfError, Result};
use crate::model::{std_normal, ParticleEnsemble, SdeModel};
use crate::scalar::{count, lit, Scalar};

/// One sampled observation: `y = h(X_t) + w`, `w ~ N(0, 1/Δt)`, `dz = y·Δt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationRecord<T> {
    pub time: T,
    pub y: T,
    pub dz: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthPath<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    pub dt: T,
    pub seed: u64,
}

/// `Xⁱ ← Xⁱ + a(Xⁱ)dt + σ_B ΔBⁱ` for every particle, each drawing from its own stream.
pub fn euler_maruyama_step<T: Scalar>(
    ens: &mut ParticleEnsemble<T>,
    model: &SdeModel<T>,
    dt: T,
) -> Result<()> {
    if !(dt > T::zero()) {
        return Err(FpfError::InvalidArgument("dt must be positive".into()));
    }
    let d = ens.dim();
    let sqrt_dt = dt.sqrt();
    let sigma = model.diffusion();
    let bad = ens
        .par_slots_mut()
        .map(|(i, (x, rng))| {
            let a = model.drift_at(x);
            let db: Vec<T> = (0..d).map(|_| std_normal::<T, _>(rng) * sqrt_dt).collect();
            if a.iter().any(|v| !v.is_finite()) {
                return Some(i);
            }
            let noise = sigma.mul_vec(&db);
            for k in 0..d {
                x[k] += a[k] * dt + noise[k];
            }
            None
        })
        .filter_map(|b| b)
        .min();
    ens.time += dt;
    match bad {
        Some(i) => Err(FpfError::NonFiniteDrift(i)),
        None => Ok(()),
    }
}

fn step_count<T: Scalar>(t_end: T, dt: T) -> Result<usize> {
    if !(t_end > T::zero() && dt > T::zero()) {
        return Err(FpfError::InvalidArgument("t_end and dt must be positive".into()));
    }
    let ratio = t_end / dt;
    let n = ratio.round();
    if (ratio - n).abs() > lit::<T>(1e-9) * n.max(T::one()) {
        return Err(FpfError::InvalidArgument(format!(
            "t_end/dt = {ratio} is not an integer"
        )));
    }
    Ok(n.to_usize().unwrap_or(0))
}

/// Euler–Maruyama path from `x0` on the grid `{0, dt, ..., t_end}`.
pub fn simulate_truth<T: Scalar>(
    model: &SdeModel<T>,
    x0: &[T],
    t_end: T,
    dt: T,
    seed: u64,
) -> Result<TruthPath<T>> {
    let steps = step_count(t_end, dt)?;
    let d = model.dim();
    if x0.len() != d {
        return Err(FpfError::DimensionMismatch { expected: d, got: x0.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sqrt_dt = dt.sqrt();
    let mut x = x0.to_vec();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x.clone());
    for _ in 0..steps {
        let a = model.drift_at(&x);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(FpfError::NonFiniteDrift(0));
        }
        let db: Vec<T> = (0..d).map(|_| std_normal::<T, _>(&mut rng) * sqrt_dt).collect();
        let noise = model.diffusion().mul_vec(&db);
        for k in 0..d {
            x[k] += a[k] * dt + noise[k];
        }
        states.push(x.clone());
    }
    Ok(TruthPath {
        times: (0..=steps).map(|k| count::<T>(k) * dt).collect(),
        states,
        dt,
        seed,
    })
}

/// Observations at `t_1, ..., t_N` (none at `t_0`). `noiseless` drops `w`.
pub fn synthesize_observations<T: Scalar>(
    path: &TruthPath<T>,
    model: &SdeModel<T>,
    seed: u64,
    noiseless: bool,
) -> Vec<ObservationRecord<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // keep observation noise independent of a truth path drawn with the same seed
    rng.set_stream(1);
    let dt = path.dt;
    let noise_sd = (T::one() / dt).sqrt();
    path.times
        .iter()
        .zip(&path.states)
        .skip(1)
        .map(|(&time, x)| {
            let w = if noiseless {
                T::zero()
            } else {
                std_normal::<T, _>(&mut rng) * noise_sd
            };
            let y = model.h(x) + w;
            ObservationRecord { time, y, dz: y * dt }
        })
        .collect()
}
