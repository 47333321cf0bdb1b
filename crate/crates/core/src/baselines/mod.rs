//! Competing fixed-budget representations: a dense SDF grid and a triplane
//! with a linear decoder, plus the budget sweep that compares them.

mod dense;
pub mod sweep;
pub mod triplane;

pub use dense::{dense_resolution, fit_dense_grid, DenseGrid};
pub use sweep::{budget_sweep, run_one, write_sweep_csv, Representation, SweepConfig, SweepRow};
pub use triplane::{fit_triplane, triplane_resolution, TriplaneConfig, TriplaneLinear};
