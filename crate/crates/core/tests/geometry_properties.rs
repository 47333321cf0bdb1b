//! Oracle and sampling properties against independent references.

use msdf_core::geometry::{farthest_point_sample_from, primitives, SdfOracle, TriangleMesh, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_point(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::from_fn(|_, _| rng.random_range(-r..r))
}

/// Möller–Trumbore ray/triangle hit test.
fn ray_hits(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return false;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(&q) * inv > 0.0
}

fn inside_by_parity(mesh: &TriangleMesh, x: &Vec3, dir: &Vec3) -> bool {
    let hits = (0..mesh.triangles().len())
        .filter(|&t| {
            let [a, b, c] = mesh.corners(t);
            ray_hits(x, dir, &a, &b, &c)
        })
        .count();
    hits % 2 == 1
}

fn test_meshes() -> Vec<TriangleMesh> {
    vec![
        primitives::icosphere(3, 0.6),
        primitives::torus(0.55, 0.25, 32, 16),
        primitives::cylinder(0.5, 1.4, 32),
        primitives::cuboid(Vec3::new(-0.7, -0.3, -0.5), Vec3::new(0.6, 0.4, 0.2)),
    ]
}

#[test]
fn sign_agrees_with_ray_parity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for mesh in test_meshes() {
        let oracle = SdfOracle::new(mesh.clone()).unwrap();
        for _ in 0..1000 {
            let x = random_point(&mut rng, 1.0);
            let dir = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let d = oracle.signed_distance(&x);
            if d.abs() < 1e-9 {
                continue;
            }
            assert_eq!(d < 0.0, inside_by_parity(&mesh, &x, &dir), "{x:?}");
        }
    }
}

#[test]
fn gradients_are_unit_and_distance_is_lipschitz() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for mesh in test_meshes() {
        let oracle = SdfOracle::new(mesh).unwrap();
        for _ in 0..1000 {
            let x = random_point(&mut rng, 1.0);
            let g = oracle.sdf_gradient(&x);
            assert!((g.norm() - 1.0).abs() < 1e-6);
            let y = random_point(&mut rng, 1.0);
            let lhs = (oracle.signed_distance(&x) - oracle.signed_distance(&y)).abs();
            assert!(lhs <= (x - y).norm() + 1e-6);
        }
    }
}

#[test]
fn area_split_is_binomial() {
    // Unit square split along the diagonal: each half has probability 1/2.
    let v = vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()];
    let mesh = TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
    let oracle = SdfOracle::new(mesh).unwrap();
    let n = 100_000;
    let s = oracle.sample_surface(n, 21);
    let below = s.points.iter().filter(|p| p.y < p.x).count() as f64;
    let sigma = (n as f64 * 0.25).sqrt();
    assert!((below - n as f64 / 2.0).abs() < 3.0 * sigma, "{below}");

    // A 3:1 split from a trapezoid.
    let v = vec![Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::y()];
    let mesh = TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
    let s = SdfOracle::new(mesh).unwrap().sample_surface(n, 22);
    let first = s.points.iter().filter(|p| p.y < p.x).count() as f64;
    let p = 0.75;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((first - n as f64 * p).abs() < 3.0 * sigma, "{first}");
}

#[test]
fn near_surface_offsets_have_requested_variance() {
    let oracle = SdfOracle::new(primitives::icosphere(4, 0.5)).unwrap();
    let n = 100_000;
    let on = oracle.sample_surface(n, 5).points;
    let near = oracle.sample_near_surface(n, 0.01, 5).unwrap().points;
    // Same seed draws the same base points, so the difference is the offset.
    for axis in 0..3 {
        let var = on
            .iter()
            .zip(&near)
            .map(|(a, b)| (b[axis] - a[axis]).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((var - 0.01).abs() < 0.001, "axis {axis}: {var}");
    }
}

#[test]
fn near_surface_distance_matches_monte_carlo() {
    let r = 0.5;
    let oracle = SdfOracle::new(primitives::icosphere(5, r)).unwrap();
    let n = 100_000;
    let pts = oracle.sample_near_surface(n, 0.01, 6).unwrap().points;
    let got = oracle.signed_distances(&pts).iter().map(|d| d.abs()).sum::<f64>() / n as f64;

    // Reference: analytic sphere, uniform directions, same noise law.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let normal = Normal::new(0.0, 0.1).unwrap();
    let reference = (0..n)
        .map(|_| {
            let dir = Vec3::from_fn(|_, _| normal.sample(&mut rng)).normalize();
            let y = dir * r + Vec3::from_fn(|_, _| normal.sample(&mut rng));
            (y.norm() - r).abs()
        })
        .sum::<f64>()
        / n as f64;
    assert!((got - reference).abs() / reference < 0.02, "{got} vs {reference}");
}

fn min_pairwise(points: &[Vec3], idx: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..idx.len() {
        for j in i + 1..idx.len() {
            best = best.min((points[idx[i]] - points[idx[j]]).norm());
        }
    }
    best
}

#[test]
fn fps_is_greedy_optimal_and_a_two_approximation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let n_pts = rng.random_range(3..=8);
        let pts: Vec<Vec3> = (0..n_pts).map(|_| random_point(&mut rng, 1.0)).collect();
        for n in 2..=n_pts {
            let sel = farthest_point_sample_from(&pts, n, 0).unwrap();
            // Each greedy step maximizes the distance to the points chosen so far.
            for step in 1..n {
                let d = |i: usize| {
                    sel[..step]
                        .iter()
                        .map(|&j| (pts[i] - pts[j]).norm())
                        .fold(f64::INFINITY, f64::min)
                };
                let best = (0..n_pts).map(d).fold(0.0, f64::max);
                assert_eq!(d(sel[step]), best);
            }
            // Exhaustive dispersion optimum over all n-subsets.
            let mut opt = 0.0f64;
            for mask in 0u32..(1 << n_pts) {
                if mask.count_ones() as usize == n {
                    let idx: Vec<usize> = (0..n_pts).filter(|i| mask >> i & 1 == 1).collect();
                    opt = opt.max(min_pairwise(&pts, &idx));
                }
            }
            assert!(min_pairwise(&pts, &sel) >= 0.5 * opt - 1e-12);
        }
    }
}
