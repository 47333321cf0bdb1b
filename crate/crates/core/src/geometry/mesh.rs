use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Indexed triangle mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
}

/// Edge incidence summary of a mesh.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeReport {
    pub edges: usize,
    /// Edges used by a single triangle.
    pub boundary: usize,
    /// Edges used by three or more triangles.
    pub non_manifold: usize,
}

impl EdgeReport {
    pub fn is_watertight(&self) -> bool {
        self.boundary == 0 && self.non_manifold == 0
    }
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite);
        }
        let nv = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= nv)) {
            return Err(Error::InvalidMesh(format!(
                "triangle {t:?} references a vertex beyond {nv}"
            )));
        }
        Ok(Self { vertices, triangles })
    }

    /// A mesh without triangles, as produced by extracting an empty level set.
    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            triangles: Vec::new(),
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized normal (twice the area, counter-clockwise winding).
    pub fn area_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    /// Unit face normal; zero for degenerate triangles.
    pub fn face_normal(&self, t: usize) -> Vec3 {
        let n = self.area_normal(t);
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn face_normals(&self) -> Vec<Vec3> {
        (0..self.triangles.len()).map(|t| self.face_normal(t)).collect()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.area_normal(t).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive for closed meshes with outward winding.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Axis-aligned bounds `(min, max)`; `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    /// Uniformly scales and translates the mesh so its bounding box is centered
    /// at the origin with longest edge 2.
    pub fn normalize_to_unit_cube(&self) -> Result<Self> {
        let (lo, hi) = self.bounds().ok_or(Error::EmptyMesh)?;
        let extent = (hi - lo).max();
        if !(extent > 0.0) {
            return Err(Error::DegenerateBounds);
        }
        let center = (lo + hi) * 0.5;
        let scale = 2.0 / extent;
        Ok(self.map_vertices(|v| (v - center) * scale))
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn edge_report(&self) -> EdgeReport {
        let mut counts: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.triangles.len() * 2);
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut report = EdgeReport {
            edges: counts.len(),
            ..Default::default()
        };
        for &c in counts.values() {
            match c {
                1 => report.boundary += 1,
                2 => {}
                _ => report.non_manifold += 1,
            }
        }
        report
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_report().is_watertight()
    }

    /// V - E + F over the referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_report().edges as i64 + self.triangles.len() as i64
    }

    /// Concatenates meshes without welding.
    pub fn merge(parts: &[TriangleMesh]) -> Self {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for m in parts {
            let base = vertices.len() as u32;
            vertices.extend_from_slice(&m.vertices);
            triangles.extend(m.triangles.iter().map(|t| t.map(|i| i + base)));
        }
        Self { vertices, triangles }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_mesh(lo: Vec3, hi: Vec3) -> TriangleMesh {
        crate::geometry::primitives::cuboid(lo, hi)
    }

    #[test]
    fn rejects_out_of_range_indices_and_nan() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        let mut bad = v;
        bad[1].x = f64::NAN;
        let err = TriangleMesh::new(bad, vec![[0, 1, 2]]).unwrap_err();
        assert_eq!(err.to_string(), "non-finite coordinates");
    }

    #[test]
    fn normalizes_cube_corners() {
        let m = box_mesh(Vec3::zeros(), Vec3::repeat(4.0)).normalize_to_unit_cube().unwrap();
        let (lo, hi) = m.bounds().unwrap();
        assert_eq!(lo, Vec3::repeat(-1.0));
        assert_eq!(hi, Vec3::repeat(1.0));
    }

    #[test]
    fn normalizes_elongated_box_with_uniform_scale() {
        let m = box_mesh(Vec3::zeros(), Vec3::new(2.0, 1.0, 1.0))
            .normalize_to_unit_cube()
            .unwrap();
        let (lo, hi) = m.bounds().unwrap();
        // Scale 2 / 2 = 1, shift by the center (1, 0.5, 0.5).
        assert_eq!(lo, Vec3::new(-1.0, -0.5, -0.5));
        assert_eq!(hi, Vec3::new(1.0, 0.5, 0.5));
    }

    #[test]
    fn normalization_is_idempotent() {
        let m = crate::geometry::primitives::torus(0.7, 0.2, 24, 12)
            .normalize_to_unit_cube()
            .unwrap();
        let again = m.normalize_to_unit_cube().unwrap();
        for (a, b) in m.vertices().iter().zip(again.vertices()) {
            assert!((a - b).norm() < 1e-9);
        }
        let (lo, hi) = again.bounds().unwrap();
        assert!(((hi - lo).max() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_extent_is_rejected() {
        let m = TriangleMesh::new(vec![Vec3::zeros(); 3], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(m.normalize_to_unit_cube(), Err(Error::DegenerateBounds)));
    }

    #[test]
    fn box_topology() {
        let m = box_mesh(Vec3::repeat(-1.0), Vec3::repeat(1.0));
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 2);
        assert!((m.signed_volume() - 8.0).abs() < 1e-12);
        assert!((m.area() - 24.0).abs() < 1e-12);
        let open = TriangleMesh::new(m.vertices().to_vec(), m.triangles()[1..].to_vec()).unwrap();
        assert!(!open.is_watertight());
        assert_eq!(open.edge_report().boundary, 3);
    }
}
