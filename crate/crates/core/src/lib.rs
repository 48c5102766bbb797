//! Rectified diffusion on low-dimensional conditional data.
//!
//! The crate covers the whole pipeline: a variance-preserving schedule
//! ([`schedule`]), a conditional noise predictor with exact gradients
//! ([`denoiser`], [`optim`]), first-order probability-flow samplers with
//! classifier-free guidance ([`sampler`]), synthetic datasets ([`data`]),
//! teacher training, deterministic pair generation and student retraining
//! ([`rectify`]), evaluation metrics ([`metrics`]) and sweep cells built from them
//! ([`eval`]).

pub mod data;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod rectify;
pub mod sampler;
pub mod schedule;

pub use denoiser::{Batch, Condition, DenoiserConfig, DenoiserModel, GradientBundle};
pub use error::{Error, Result};
pub use schedule::{NoiseSchedule, T_MIN_CLIP};
