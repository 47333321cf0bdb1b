//! Initialization: farthest-point centers on the surface, one shared scale
//! large enough to cover the surface, and grid values read from the oracle.

use crate::error::{invalid, Result};
use crate::geometry::{farthest_point_sample, SdfOracle, TriangleMesh, Vec3};

use super::boxtree::BoxTree;
use super::{lattice, MosaicSdf};

#[derive(Clone, Debug)]
pub struct InitConfig {
    /// Dense surface samples the centers are drawn from.
    pub surface_samples: usize,
    /// Relative safety margin applied to the covering radius.
    pub margin: f64,
    /// Relative tolerance of the certified covering radius.
    pub tolerance: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            surface_samples: 100_000,
            margin: 0.01,
            tolerance: 1e-3,
        }
    }
}

fn inf_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).abs().max((a[1] - b[1]).abs()).max((a[2] - b[2]).abs())
}

/// Largest ∞-distance from a surface sample to its nearest center, times
/// `1 + margin`, floored at `1e-6`.
pub fn covering_scale_with_margin(centers: &[[f64; 3]], surface: &[[f64; 3]], margin: f64) -> Result<f64> {
    if centers.is_empty() || surface.is_empty() {
        return Err(invalid("covering scale needs centers and surface samples"));
    }
    let tree = BoxTree::build(centers.to_vec(), vec![0.0; centers.len()]);
    let worst = surface.iter().map(|x| tree.nearest_gap(x)).fold(0.0, f64::max);
    Ok((worst * (1.0 + margin)).max(1e-6))
}

/// [`covering_scale_with_margin`] with the default 1% margin.
pub fn covering_scale(centers: &[[f64; 3]], surface: &[[f64; 3]]) -> Result<f64> {
    covering_scale_with_margin(centers, surface, 0.01)
}

/// Upper bound, within relative `tol`, of `max_{x ∈ mesh} min_i ‖x - p_i‖∞`.
///
/// Branch and bound over triangles: the distance function is 1-Lipschitz in
/// the ∞-norm, so a triangle cannot exceed its centroid value plus its
/// ∞-radius around the centroid. Triangles whose bound is within `tol` of the
/// best attained value are discarded; the rest are split into four.
pub fn certified_covering_radius(mesh: &TriangleMesh, centers: &[[f64; 3]], tol: f64) -> Result<f64> {
    if centers.is_empty() || mesh.is_empty() {
        return Err(invalid("covering radius needs centers and a non-empty mesh"));
    }
    let tree = BoxTree::build(centers.to_vec(), vec![0.0; centers.len()]);
    let f = |x: &[f64; 3]| tree.nearest_gap(x);
    let to = |v: Vec3| [v.x, v.y, v.z];

    let mut best = 0.0f64;
    let mut stack: Vec<([[f64; 3]; 3], f64, u32)> = Vec::new();
    for t in 0..mesh.triangles().len() {
        let tri = mesh.corners(t).map(to);
        for v in &tri {
            best = best.max(f(v));
        }
        stack.push((tri, f64::INFINITY, 0));
    }
    // Bound reached only at the depth limit; kept so the result stays an upper bound.
    let mut unresolved = 0.0f64;
    while let Some((tri, bound, depth)) = stack.pop() {
        if bound <= best * (1.0 + tol) {
            continue;
        }
        let c = [0, 1, 2].map(|a| (tri[0][a] + tri[1][a] + tri[2][a]) / 3.0);
        let fc = f(&c);
        best = best.max(fc);
        let radius = tri.iter().map(|v| inf_dist(v, &c)).fold(0.0, f64::max);
        let ub = fc + radius;
        if ub <= best * (1.0 + tol) {
            continue;
        }
        if depth >= 40 {
            unresolved = unresolved.max(ub);
            continue;
        }
        let mid = |a: &[f64; 3], b: &[f64; 3]| [0, 1, 2].map(|i| 0.5 * (a[i] + b[i]));
        let (m01, m12, m20) = (mid(&tri[0], &tri[1]), mid(&tri[1], &tri[2]), mid(&tri[2], &tri[0]));
        for sub in [
            [tri[0], m01, m20],
            [m01, tri[1], m12],
            [m20, m12, tri[2]],
            [m01, m12, m20],
        ] {
            stack.push((sub, ub, depth + 1));
        }
    }
    Ok((best * (1.0 + tol)).max(unresolved))
}

/// Smallest `f32` not below `x` (for positive finite `x`).
fn f32_at_least(x: f64) -> f32 {
    let r = x as f32;
    if (r as f64) < x {
        f32::from_bits(r.to_bits() + 1)
    } else {
        r
    }
}

pub fn initialize(oracle: &SdfOracle, n: usize, k: usize, seed: u64) -> Result<MosaicSdf> {
    initialize_with(oracle, n, k, seed, &InitConfig::default())
}

/// Centers by farthest-point sampling of dense surface samples, a shared
/// scale certified to cover the whole surface (plus the margin), and
/// `V_i = F_S(p_i + s·G)`.
pub fn initialize_with(oracle: &SdfOracle, n: usize, k: usize, seed: u64, config: &InitConfig) -> Result<MosaicSdf> {
    if n == 0 || k < 2 {
        return Err(invalid(format!("need n ≥ 1 and k ≥ 2, got n={n}, k={k}")));
    }
    if config.surface_samples < n {
        return Err(invalid(format!(
            "{} surface samples cannot provide {n} centers",
            config.surface_samples
        )));
    }
    let samples = oracle.sample_surface(config.surface_samples, seed).points;
    let picked = farthest_point_sample(&samples, n, seed)?;
    let centers: Vec<[f32; 3]> = picked
        .iter()
        .map(|&i| [samples[i].x as f32, samples[i].y as f32, samples[i].z as f32])
        .collect();
    let centers64: Vec<[f64; 3]> = centers.iter().map(|c| c.map(f64::from)).collect();

    let radius = certified_covering_radius(oracle.mesh(), &centers64, config.tolerance)?;
    let s = f32_at_least((radius * (1.0 + config.margin)).max(1e-6));
    log::debug!("init: n={n} k={k} covering radius {radius:.6}, s={s}");

    let g = lattice(k);
    let nodes: Vec<Vec3> = centers64
        .iter()
        .flat_map(|p| {
            g.iter()
                .map(move |q| Vec3::new(p[0] + s as f64 * q[0], p[1] + s as f64 * q[1], p[2] + s as f64 * q[2]))
        })
        .collect();
    let values = oracle.signed_distances(&nodes).into_iter().map(|v| v as f32).collect();
    MosaicSdf::new(k, centers, vec![s; n], values)
}
