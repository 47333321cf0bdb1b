//! Mosaic-SDF: a shape represented as a set of small local SDF grids.
//!
//! A shape is stored as `n` tuples `(p_i, s_i, V_i)` of a center, a scale and
//! a `k³` grid of signed-distance samples. The field at `x` blends trilinear
//! lookups of every grid whose ∞-ball contains `x`, weighted by
//! `ReLU(1 - ‖(x - p_i) / s_i‖∞)` and normalized to a partition of unity.
//!
//! Modules:
//! - [`geometry`]: meshes, mesh IO, the exact signed-distance oracle, sampling.
//! - [`msdf`]: the representation, its initialization and fine-tuning.
//! - [`baselines`]: dense grids and triplanes at a fixed parameter budget.
//! - [`extraction`]: marching cubes, with a path that only visits cells near grids.
//! - [`metrics`]: point-cloud distances and set-level generative metrics.

pub mod baselines;
mod error;
pub mod extraction;
pub mod fixtures;
pub mod geometry;
pub mod metrics;
pub mod msdf;

pub use error::{Error, Result};
