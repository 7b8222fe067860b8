//! Independent oracles and baselines used to check and benchmark the
//! reduced estimator.
//!
//! - [`dense`]: batch inference on the stacked joint Gaussian with
//!   pseudoinverse conditioning.
//! - [`unreduced`]: the square-root filter run on the original state.
//! - [`conventional`]: covariance-form filtering and RTS smoothing on the
//!   reduced model, via Cholesky or LU solves.
//! - [`flops`]: leading-order operation counts.
//! - [`extended`]: 256-bit references for the initial-state posterior and
//!   for exact batch conditioning of small models.

pub mod conventional;
pub mod dense;
pub mod extended;
pub mod flops;
pub mod unreduced;

pub use conventional::{conventional_reduced_smoother, ConventionalOutput, Solver};
pub use dense::{batch_condition, build_joint, BatchPosterior, DenseJointLaw, StateMoments};
pub use extended::{batch_reference, initial_state_reference, ExactPosterior};
pub use flops::{flop_ratio, FlopModel};
pub use unreduced::unreduced_robust_filter;
