//! Area-uniform surface sampling and farthest point sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mesh::{TriangleMesh, Vec3};
use crate::error::{invalid, Error, Result};

/// Cumulative triangle areas.
pub(crate) fn area_cdf(mesh: &TriangleMesh) -> Result<Vec<f64>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut acc = 0.0;
    let cdf: Vec<f64> = (0..mesh.triangles().len())
        .map(|t| {
            acc += mesh.triangle_area(t);
            acc
        })
        .collect();
    if !(acc > 0.0) {
        return Err(Error::InvalidMesh("zero surface area".into()));
    }
    Ok(cdf)
}

/// One area-uniform point: a triangle by area, then uniform barycentrics.
pub(crate) fn sample_on(mesh: &TriangleMesh, cdf: &[f64], rng: &mut ChaCha8Rng) -> (usize, Vec3) {
    let total = *cdf.last().expect("non-empty");
    let u: f64 = rng.random::<f64>() * total;
    let t = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
    let (r1, r2): (f64, f64) = (rng.random(), rng.random());
    let s = r1.sqrt();
    let [a, b, c] = mesh.corners(t);
    (t, a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2))
}

/// `count` area-uniform points on the mesh. Same draws as
/// [`SdfOracle::sample_surface`](super::SdfOracle::sample_surface) for equal seeds.
pub fn sample_mesh_surface(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<Vec<Vec3>> {
    let cdf = area_cdf(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| sample_on(mesh, &cdf, &mut rng).1).collect())
}

/// Greedy max-min selection starting at a seed-chosen point. Returns indices in
/// selection order.
pub fn farthest_point_sample(points: &[Vec3], n: usize, seed: u64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(invalid("farthest point sampling of an empty point set"));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..points.len());
    farthest_point_sample_from(points, n, start)
}

/// Greedy max-min selection from a given start index. Ties pick the lowest index.
pub fn farthest_point_sample_from(points: &[Vec3], n: usize, start: usize) -> Result<Vec<usize>> {
    if n == 0 || n > points.len() {
        return Err(invalid(format!(
            "cannot select {n} of {} points",
            points.len()
        )));
    }
    if start >= points.len() {
        return Err(invalid(format!("start index {start} out of range")));
    }
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut chosen = Vec::with_capacity(n);
    let mut current = start;
    for _ in 0..n {
        chosen.push(current);
        let c = points[current];
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.0 {
                best = (dist[i], i);
            }
        }
        current = best.1;
    }
    Ok(chosen)
}

pub fn farthest_points(points: &[Vec3], n: usize, seed: u64) -> Result<Vec<Vec3>> {
    Ok(farthest_point_sample(points, n, seed)?
        .into_iter()
        .map(|i| points[i])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_example() {
        let pts: Vec<Vec3> = [0.0, 0.1, 1.0].iter().map(|&x| Vec3::new(x, 0.0, 0.0)).collect();
        assert_eq!(farthest_point_sample_from(&pts, 2, 0).unwrap(), vec![0, 2]);
    }

    #[test]
    fn full_selection_is_a_permutation() {
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new((i * 7 % 20) as f64, (i % 3) as f64, 0.0)).collect();
        let mut sel = farthest_point_sample(&pts, 20, 4).unwrap();
        sel.sort();
        assert_eq!(sel, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_oversized_requests() {
        let pts = vec![Vec3::zeros(); 3];
        assert!(farthest_point_sample(&pts, 4, 0).is_err());
        assert!(farthest_point_sample(&pts, 0, 0).is_err());
    }
}
