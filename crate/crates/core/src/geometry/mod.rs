//! Meshes, mesh IO, the exact signed-distance oracle and point sampling.

pub mod bvh;
pub mod io;
mod mesh;
pub mod oracle;
pub mod primitives;
pub mod sampling;

pub use io::{load_mesh, write_obj};
pub use mesh::{EdgeReport, TriangleMesh, Vec3};
pub use oracle::{SampleKind, SdfOracle, SignMode, SurfaceSamples};
pub use sampling::{sample_mesh_surface, farthest_point_sample, farthest_point_sample_from, farthest_points};
