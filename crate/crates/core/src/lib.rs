//! Identification of stochastic nonlinear systems as meta-state-space
//! models.
//!
//! A meta-state-space model replaces the stochastic state of a system by a
//! deterministic meta-state `z` that evolves as `z₊ = f(z, u)`; the output
//! distribution `p(y | z, u)` is a Gaussian mixture produced by three small
//! networks. This crate contains the pieces needed to build, train and judge
//! such models:
//!
//! - [`diffcore`]: batched feedforward nets with exact reverse-mode gradients
//!   and Adam.
//! - [`model`] / [`mixture`] / [`checkpoint`]: the model, its output
//!   distribution and the binary checkpoint format.
//! - [`simulator`]: stochastic state-space systems, the benchmark system and
//!   dataset/ensemble generation.
//! - [`trainer`]: multiple-shooting negative log-likelihood and the fitting
//!   loop.
//! - [`eval`]: ensemble log-likelihood, Gaussian baselines, the entropy-based
//!   upper limit and histogram comparison tables.
//!
//! The model, trainer and evaluation code are generic over [`Real`]; the
//! aliases below fix the scalar to `f64`, which is what the CLI uses.

pub mod checkpoint;
pub mod diffcore;
pub mod error;
pub mod eval;
mod fastmath;
pub mod mixture;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod simulator;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type MssModelF64 = model::MssModel<f64>;
pub type MssModelF32 = model::MssModel<f32>;
pub type GaussianMixtureF64 = mixture::GaussianMixture<f64>;
pub type MlpParamsF64 = diffcore::MlpParams<f64>;
