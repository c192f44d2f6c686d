//! Multivariate feedback particle filter.
//!
//! The library is generic over the scalar type (`f32` or `f64`) through
//! [`Scalar`]; the aliases at the bottom of this file fix it to `f64`.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod divergence;
pub mod error;
pub mod fields;
pub mod fpf;
pub mod gain;
pub mod grid;
pub mod identity;
pub mod io;
pub mod linalg;
pub mod model;
pub mod poly;
pub mod reference;
pub mod scalar;
pub mod sde;

pub use error::{FpfError, Result};
pub use linalg::Matrix;
pub use model::{
    ensemble_stats, presets, sample_initial_ensemble, validate_model, Drift, Observation,
    ParticleEnsemble, PosteriorStats, SdeModel,
};
pub use poly::{PolyField, Polynomial};
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Model = SdeModel<f64>;
pub type Ensemble = ParticleEnsemble<f64>;
pub type Stats = PosteriorStats<f64>;
