//! Minimal reverse-mode differentiation for desk-scale training loops.
//!
//! Two engines live here:
//!
//! * [`Tape`]: a define-by-run graph over dense row-major `f32` [`Tensor`]s,
//!   rebuilt every step. Used by the velocity network.
//! * [`scalar::ScalarTape`]: a Wengert list over `f64` scalars, used where the
//!   computation is a sparse gather per sample point (local grid fitting).
//!
//! [`AdamState`] implements bias-corrected Adam with an EMA shadow of the
//! parameters, and [`checkpoint`] reads and writes named parameter records.

pub mod adam;
pub mod checkpoint;
mod error;
pub mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState, ParamStore};
pub use error::{DiffError, Result};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
