//! Numerically robust Gaussian filtering, smoothing and marginal-likelihood
//! evaluation for linear state-space models whose observations are partly
//! noise-free.
//!
//! The crate is split into an offline stage, [`reduction`], which turns a
//! singular-observation model into a smaller nonsingular one before any data
//! is seen, and an online stage, [`estimation`], which runs square-root
//! filtering and smoothing on the reduced model. All conditioning goes
//! through the QR-based primitives in [`gaussian`].

pub mod error;
pub mod estimation;
pub mod gaussian;
pub mod linalg;
pub mod reduction;
pub mod reference;
pub mod simulate;

pub use error::{Error, Result};
