//! The feedback particle filter loop.
//!
//! Each observation step propagates the particles through the signal SDE,
//! re-solves the gain on the propagated ensemble, and applies the control
//! `v = K dz + u dt` with the raw increment `dz`. There is no resampling.

use rayon::prelude::*;

use crate::error::{FpfError, Result};
use crate::gain::{check_admissible, solve_gain, GainField, GainMethod};
use crate::linalg::Matrix;
use crate::model::{h_values, sample_initial_ensemble, stats_from_h, ParticleEnsemble, PosteriorStats, SdeModel};
use crate::scalar::{lit, Scalar};
use crate::sde::{euler_maruyama_step, ObservationRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig<T> {
    pub gain_method: GainMethod<T>,
    pub dt: T,
    pub n_particles: usize,
    pub seed: u64,
    pub abort_on_inadmissible: bool,
    /// Determinant floor for the admissibility check.
    pub det_floor: T,
}

impl<T: Scalar> FilterConfig<T> {
    pub fn new(gain_method: GainMethod<T>, dt: T, n_particles: usize, seed: u64) -> Self {
        Self {
            gain_method,
            dt,
            n_particles,
            seed,
            abort_on_inadmissible: true,
            det_floor: lit(1e-8),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) {
            return Err(FpfError::InvalidArgument("dt must be positive".into()));
        }
        if self.n_particles < 2 {
            return Err(FpfError::InvalidArgument("n_particles must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow<T> {
    pub t: T,
    pub dz: T,
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
    pub h_hat: T,
    pub n_flagged: usize,
}

impl<T: Scalar> TraceRow<T> {
    pub fn from_stats(t: T, dz: T, s: &PosteriorStats<T>, n_flagged: usize) -> Self {
        Self {
            t,
            dz,
            mean: s.mean.clone(),
            cov: s.cov.clone(),
            h_hat: s.h_hat,
            n_flagged,
        }
    }
}

/// Per-step posterior summaries; the first row is the prior at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace<T> {
    pub dim: usize,
    pub rows: Vec<TraceRow<T>>,
}

impl<T: Scalar> FilterTrace<T> {
    pub fn total_flagged(&self) -> usize {
        self.rows.iter().map(|r| r.n_flagged).sum()
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome<T> {
    pub gain: GainField<T>,
    pub flagged: Vec<usize>,
    pub posterior: PosteriorStats<T>,
}

/// One filter step. `step` is only used to label errors.
pub fn fpf_step<T: Scalar>(
    ens: &mut ParticleEnsemble<T>,
    model: &SdeModel<T>,
    cfg: &FilterConfig<T>,
    obs: &ObservationRecord<T>,
    step: usize,
) -> Result<StepOutcome<T>> {
    let expected = ens.time + cfg.dt;
    if (obs.time - expected).abs() > lit::<T>(1e-9) * T::one().max(expected.abs()) {
        return Err(FpfError::InvalidArgument(format!(
            "observation at t = {} does not follow ensemble time {} by dt",
            obs.time, ens.time
        )));
    }
    euler_maruyama_step(ens, model, cfg.dt)?;
    ens.time = obs.time;

    let h_vals = h_values(ens, model);
    let prior = stats_from_h(ens, &h_vals);
    let gain = solve_gain(&cfg.gain_method, ens, model, &prior, &h_vals)?;
    if !gain.all_finite() {
        return Err(FpfError::Instability);
    }
    let report = check_admissible(ens.dim(), &gain.displacement_jacobians(obs.dz, cfg.dt), cfg.det_floor);
    if cfg.abort_on_inadmissible && !report.flagged.is_empty() {
        return Err(FpfError::Inadmissible {
            step,
            indices: report.flagged,
        });
    }

    let d = ens.dim();
    let (dz, dt) = (obs.dz, cfg.dt);
    ens.par_slots_mut().for_each(|(i, (x, _))| {
        let k = gain.k_at(i);
        let u = gain.u_at(i);
        for j in 0..d {
            x[j] += k[j] * dz + u[j] * dt;
        }
    });
    if !ens.all_finite() {
        return Err(FpfError::Instability);
    }
    let posterior = stats_from_h(ens, &h_values(ens, model));
    Ok(StepOutcome {
        gain,
        flagged: report.flagged,
        posterior,
    })
}

/// Owns the ensemble across steps.
#[derive(Debug, Clone)]
pub struct FeedbackParticleFilter<T> {
    pub model: SdeModel<T>,
    pub cfg: FilterConfig<T>,
    ens: ParticleEnsemble<T>,
    steps: usize,
}

impl<T: Scalar> FeedbackParticleFilter<T> {
    /// Initializes `N(init_mean, init_cov)` particles from `cfg.seed`.
    pub fn new(model: SdeModel<T>, cfg: FilterConfig<T>, init_mean: &[T], init_cov: &Matrix<T>) -> Result<Self> {
        cfg.validate()?;
        if init_mean.len() != model.dim() {
            return Err(FpfError::DimensionMismatch { expected: model.dim(), got: init_mean.len() });
        }
        let ens = sample_initial_ensemble(cfg.n_particles, init_mean, init_cov, cfg.seed)?;
        Ok(Self::from_ensemble(model, cfg, ens))
    }

    pub fn from_ensemble(model: SdeModel<T>, cfg: FilterConfig<T>, ens: ParticleEnsemble<T>) -> Self {
        Self { model, cfg, ens, steps: 0 }
    }

    pub fn ensemble(&self) -> &ParticleEnsemble<T> {
        &self.ens
    }

    pub fn stats(&self) -> PosteriorStats<T> {
        stats_from_h(&self.ens, &h_values(&self.ens, &self.model))
    }

    pub fn step(&mut self, obs: &ObservationRecord<T>) -> Result<StepOutcome<T>> {
        self.steps += 1;
        fpf_step(&mut self.ens, &self.model, &self.cfg, obs, self.steps)
    }
}

/// Runs the filter over `observations`, starting from `N(init_mean, init_cov)`.
pub fn run_filter<T: Scalar>(
    model: &SdeModel<T>,
    observations: &[ObservationRecord<T>],
    cfg: &FilterConfig<T>,
    init_mean: &[T],
    init_cov: &Matrix<T>,
) -> Result<FilterTrace<T>> {
    let mut filter = FeedbackParticleFilter::new(model.clone(), cfg.clone(), init_mean, init_cov)?;
    let mut rows = vec![TraceRow::from_stats(T::zero(), T::zero(), &filter.stats(), 0)];
    for obs in observations {
        let out = filter.step(obs)?;
        rows.push(TraceRow::from_stats(obs.time, obs.dz, &out.posterior, out.flagged.len()));
    }
    Ok(FilterTrace { dim: model.dim(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, Observation};
    use crate::poly::Polynomial;

    fn cfg(method: GainMethod<f64>, n: usize) -> FilterConfig<f64> {
        FilterConfig::new(method, 0.01, n, 3)
    }

    #[test]
    fn no_observations_gives_prior_row_only() {
        let m = presets::linear1d::<f64>();
        let t = run_filter(&m, &[], &cfg(GainMethod::ExactGaussian, 100), &[0.0], &Matrix::identity(1)).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].t, 0.0);
    }

    #[test]
    fn constant_h_reduces_to_propagation() {
        let m = presets::linear1d::<f64>().with_obs(Observation::poly(Polynomial::constant(1, 2.0)));
        let c = cfg(GainMethod::Constant, 64);
        let mut a = sample_initial_ensemble(64, &[0.0], &Matrix::identity(1), 3).unwrap();
        let mut b = a.clone();
        let obs = ObservationRecord { time: 0.01, y: 2.0, dz: 0.02 };
        let out = fpf_step(&mut a, &m, &c, &obs, 1).unwrap();
        assert!(out.gain.k.iter().all(|&k| k == 0.0));
        euler_maruyama_step(&mut b, &m, 0.01).unwrap();
        // u = -½·0·(h + ĥ) = 0 exactly
        assert_eq!(a.states(), b.states());
    }

    #[test]
    fn noiseless_update_pulls_mean_toward_truth() {
        let m = presets::linear1d::<f64>();
        let c = cfg(GainMethod::ExactGaussian, 2000);
        let mut e = sample_initial_ensemble(2000, &[1.0], &Matrix::identity(1), 8).unwrap();
        let before = crate::model::ensemble_stats(&e, &m).mean[0];
        let obs = ObservationRecord { time: 0.01, y: 0.0, dz: 0.0 };
        let out = fpf_step(&mut e, &m, &c, &obs, 1).unwrap();
        assert!(out.posterior.mean[0].abs() < before.abs());
    }

    #[test]
    fn step_is_deterministic() {
        let m = presets::linear1d::<f64>();
        let c = cfg(GainMethod::Galerkin { degree: 2, ridge: None }, 300);
        let e0 = sample_initial_ensemble(300, &[0.2], &Matrix::identity(1), 8).unwrap();
        let obs = ObservationRecord { time: 0.01, y: 0.4, dz: 0.004 };
        let (mut a, mut b) = (e0.clone(), e0);
        fpf_step(&mut a, &m, &c, &obs, 1).unwrap();
        fpf_step(&mut b, &m, &c, &obs, 1).unwrap();
        assert_eq!(a.states(), b.states());
    }

    #[test]
    fn mistimed_observation_rejected() {
        let m = presets::linear1d::<f64>();
        let mut e = sample_initial_ensemble(10, &[0.0], &Matrix::identity(1), 8).unwrap();
        let obs = ObservationRecord { time: 0.5, y: 0.0, dz: 0.0 };
        assert!(fpf_step(&mut e, &m, &cfg(GainMethod::Constant, 10), &obs, 1).is_err());
    }

    #[test]
    fn inadmissible_control_aborts() {
        // K(x) grows like x², so a large dz folds the map
        let m = presets::linear1d::<f64>().with_obs(Observation::poly(Polynomial::univariate(&[0.0, 0.0, 0.0, 1.0])));
        let c = cfg(GainMethod::Galerkin { degree: 3, ridge: None }, 400);
        let mut e = sample_initial_ensemble(400, &[0.0], &Matrix::identity(1), 8).unwrap();
        let obs = ObservationRecord { time: 0.01, y: -500.0, dz: -5.0 };
        match fpf_step(&mut e, &m, &c, &obs, 7) {
            Err(FpfError::Inadmissible { step, indices }) => {
                assert_eq!(step, 7);
                assert!(!indices.is_empty());
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }
}
