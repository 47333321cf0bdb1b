//! Flow matching over Mosaic-SDF matrices.
//!
//! A shape is an `n × d` matrix whose rows are an unordered set. The
//! velocity model is permutation equivariant, training regresses the
//! conditional optimal-transport velocity, and sampling integrates the
//! classifier-free guided field from Gaussian noise.

pub mod checkpoint;
mod error;
pub mod model;
pub mod path;
pub mod sample;
pub mod solver;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, ParityFlags};
pub use error::{FlowError, Result};
pub use model::{ModelConfig, VelocityModel};
pub use path::CondOtPath;
pub use sample::{cfg_velocity, guide, matrix_to_shape, sample, sample_from, sample_to_shape, GeneratedShape};
pub use solver::{integrate, OdeSolution, Solver};
pub use train::{train, Example, TrainConfig, TrainReport};
