//! Riemannian conditional flow matching for categorical data.
//!
//! Categorical distributions over `d + 1` classes live on the probability
//! simplex. Under the Fisher-Rao metric the simplex interior is isometric
//! (up to a factor of two) to the positive orthant of the unit sphere via
//! the square-root map, which turns geodesics, exponential and logarithm
//! maps into closed-form great-circle operations. This crate builds a flow
//! matching pipeline on top of that geometry:
//!
//! - [`geometry`]: closed-form primitives on the simplex, the sphere orthant
//!   and their products.
//! - [`transport`]: minibatch entropic optimal transport couplings.
//! - [`field`]: the residual MLP vector field with a hand-written backward pass.
//! - [`trainer`]: the flow-matching training loop, AdamW and checkpoints.
//! - [`sampler`]: ODE integration from the prior and decoding.
//! - [`eval`]: toy distributions, KL estimation, heatmaps and ablations.

// `!(x > 0.0)` rejects NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod rng;
pub mod sampler;
pub mod trainer;
pub mod transport;

pub use error::{Error, Result};
pub use field::{FieldModel, GradientBuffer, ModelSpec};
pub use geometry::{Chart, ProductPoint, SimplexPoint, SpherePoint, TangentVector};
pub use sampler::{SamplerConfig, Scheme};
pub use trainer::{Checkpoint, Dataset, TrainConfig};
pub use transport::{Coupling, SinkhornConfig};
