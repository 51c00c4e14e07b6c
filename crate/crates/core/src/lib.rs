//! Score models with a Dirichlet-energy penalty on their Jacobian, and
//! topological dimension estimation from adversarial probes of the learned
//! score.
//!
//! The pieces, bottom up:
//! - [`manifolds`]: synthetic datasets with known per-point dimension.
//! - [`diffusion`]: VP and single-scale noise schedules.
//! - [`score_model`]: the MLP score network with hand-written backprop.
//! - [`regularizer`]: Jacobian power iteration and the regularized DSM loss.
//! - [`train`]: the training loop with Adam and a cosine schedule.
//! - [`attack`] and [`estimator`]: the probe and its inversion to a dimension.
//! - [`baselines`]: kNN estimators for comparison.
//! - [`oracle`]: closed-form Gaussian references.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod baselines;
pub mod cli;
pub mod diffusion;
pub mod error;
pub mod estimator;
pub mod hexfloat;
pub mod linalg;
pub mod manifolds;
pub mod optim;
pub mod oracle;
pub mod regularizer;
pub mod rng;
pub mod score_model;
pub mod train;

pub use error::{Error, Result};
