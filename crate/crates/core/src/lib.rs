//! Data-efficient adversarial imitation from observation.
//!
//! A time-varying linear-Gaussian controller is trained from state-only
//! demonstrations. A discriminator with a quadratic head scores state
//! transitions; its coefficients are mapped through fitted local linear
//! dynamics into a time-indexed state-action quadratic cost, which drives a
//! two-stage LQR + path-integral controller update.

pub mod cost_transform;
pub mod dealio;
pub mod discriminator;
pub mod dynamics_fit;
pub mod envs;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lqr;
pub mod net;
pub mod pi2;
pub mod pilqr;
pub mod rng;
pub mod types;
pub mod verify;

pub use error::{Error, Result};
pub use types::{
    normalized_score, Demonstration, DemonstrationSet, LinearGaussianDynamics, QuadraticCost,
    StatePath, Trajectory, Transition, TvlgController,
};
