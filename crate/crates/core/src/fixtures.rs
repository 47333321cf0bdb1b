//! Procedural test shapes: closed, outward-wound meshes normalized to the
//! unit cube, each under 50K triangles.
//!
//! Shapes beyond the basic primitives are built by contouring implicit CSG
//! fields with marching cubes.

use crate::error::Result;
use crate::extraction::marching_cubes;
use crate::geometry::{primitives, TriangleMesh, Vec3};

type Field = Box<dyn Fn(&[f64; 3]) -> f64 + Sync>;

fn v(p: &[f64; 3]) -> Vec3 {
    Vec3::new(p[0], p[1], p[2])
}

fn sd_box(p: &[f64; 3], c: [f64; 3], h: [f64; 3]) -> f64 {
    let q = Vec3::from_fn(|a, _| (p[a] - c[a]).abs() - h[a]);
    q.map(|x| x.max(0.0)).norm() + q.max().min(0.0)
}

fn sd_sphere(p: &[f64; 3], c: [f64; 3], r: f64) -> f64 {
    (v(p) - v(&c)).norm() - r
}

/// Cylinder along `axis` through `c`, radius `r`, half-length `h`.
fn sd_cylinder(p: &[f64; 3], c: [f64; 3], axis: usize, r: f64, h: f64) -> f64 {
    let d: Vec<f64> = (0..3).map(|a| p[a] - c[a]).collect();
    let radial = (0..3).filter(|&a| a != axis).map(|a| d[a] * d[a]).sum::<f64>().sqrt() - r;
    let along = d[axis].abs() - h;
    let (x, y) = (radial.max(0.0), along.max(0.0));
    (x * x + y * y).sqrt() + radial.max(along).min(0.0)
}

/// Torus in the plane normal to `axis`.
fn sd_torus(p: &[f64; 3], c: [f64; 3], axis: usize, major: f64, minor: f64) -> f64 {
    let d: Vec<f64> = (0..3).map(|a| p[a] - c[a]).collect();
    let radial = (0..3).filter(|&a| a != axis).map(|a| d[a] * d[a]).sum::<f64>().sqrt() - major;
    (radial * radial + d[axis] * d[axis]).sqrt() - minor
}

fn union(fs: impl IntoIterator<Item = f64>) -> f64 {
    fs.into_iter().fold(f64::INFINITY, f64::min)
}

fn chair() -> Field {
    Box::new(|p| {
        let mut parts = vec![
            sd_box(p, [0.0, -0.05, 0.0], [0.45, 0.05, 0.45]),
            sd_box(p, [0.0, 0.45, -0.4], [0.45, 0.45, 0.05]),
        ];
        for (x, z) in [(-0.38, -0.38), (0.38, -0.38), (-0.38, 0.38), (0.38, 0.38)] {
            parts.push(sd_box(p, [x, -0.5, z], [0.05, 0.45, 0.05]));
        }
        union(parts)
    })
}

fn table() -> Field {
    Box::new(|p| {
        let mut parts = vec![sd_box(p, [0.0, 0.3, 0.0], [0.8, 0.04, 0.5])];
        for (x, z) in [(-0.7, -0.4), (0.7, -0.4), (-0.7, 0.4), (0.7, 0.4)] {
            parts.push(sd_cylinder(p, [x, -0.15, z], 1, 0.05, 0.45));
        }
        union(parts)
    })
}

fn mug() -> Field {
    Box::new(|p| {
        let outer = sd_cylinder(p, [0.0, 0.0, 0.0], 1, 0.4, 0.5);
        let inner = sd_cylinder(p, [0.0, 0.1, 0.0], 1, 0.32, 0.5);
        let cup = outer.max(-inner);
        let handle = sd_torus(p, [0.45, 0.0, 0.0], 2, 0.22, 0.05).max(0.4 - p[0]);
        cup.min(handle)
    })
}

fn dumbbell() -> Field {
    Box::new(|p| {
        union([
            sd_sphere(p, [-0.6, 0.0, 0.0], 0.3),
            sd_sphere(p, [0.6, 0.0, 0.0], 0.3),
            sd_cylinder(p, [0.0, 0.0, 0.0], 0, 0.08, 0.6),
        ])
    })
}

fn bracket() -> Field {
    Box::new(|p| {
        let l = sd_box(p, [0.0, -0.4, 0.0], [0.6, 0.1, 0.3]).min(sd_box(p, [-0.5, 0.05, 0.0], [0.1, 0.45, 0.3]));
        let hole = sd_cylinder(p, [0.2, -0.4, 0.0], 1, 0.12, 0.5);
        l.max(-hole)
    })
}

fn gear() -> Field {
    Box::new(|p| {
        let r = (p[0] * p[0] + p[2] * p[2]).sqrt();
        let angle = p[2].atan2(p[0]);
        // Twelve teeth as a radial modulation of the rim.
        let rim = 0.62 + 0.08 * (12.0 * angle).cos().clamp(-0.6, 0.6) / 0.6;
        let disc = (r - rim).max(p[1].abs() - 0.12);
        let bore = sd_cylinder(p, [0.0, 0.0, 0.0], 1, 0.18, 0.5);
        disc.max(-bore)
    })
}

fn contour(field: Field, resolution: usize) -> Result<TriangleMesh> {
    let (mesh, _) = marching_cubes(&field, resolution)?;
    mesh.normalize_to_unit_cube()
}

/// The named test shapes. Contoured shapes use a 96³ lattice.
pub fn test_meshes() -> Result<Vec<(String, TriangleMesh)>> {
    let res = 96;
    let mut out = vec![
        ("sphere".to_string(), primitives::icosphere(4, 0.8).normalize_to_unit_cube()?),
        ("torus".to_string(), primitives::torus(0.6, 0.25, 64, 32).normalize_to_unit_cube()?),
        ("cylinder".to_string(), primitives::cylinder(0.45, 1.6, 64).normalize_to_unit_cube()?),
        (
            "slab".to_string(),
            primitives::cuboid(Vec3::new(-0.9, -0.3, -0.5), Vec3::new(0.9, 0.3, 0.5)).normalize_to_unit_cube()?,
        ),
    ];
    let contoured: [(&str, Field); 6] = [
        ("chair", chair()),
        ("table", table()),
        ("mug", mug()),
        ("dumbbell", dumbbell()),
        ("bracket", bracket()),
        ("gear", gear()),
    ];
    for (name, f) in contoured {
        out.push((name.to_string(), contour(f, res)?));
    }
    Ok(out)
}

/// A single named shape from [`test_meshes`].
pub fn test_mesh(name: &str) -> Result<TriangleMesh> {
    test_meshes()?
        .into_iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| m)
        .ok_or_else(|| crate::error::Error::InvalidArgument(format!("no test shape named {name:?}")))
}
