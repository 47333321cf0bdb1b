//! Exact signed distance to a triangle mesh.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::bvh::{ClosestPoint, Feature, TriangleBvh};
use super::mesh::{TriangleMesh, Vec3};
use super::sampling::{area_cdf, sample_on};
use crate::error::{invalid, Error, Result};

/// Distances at or below this count as on the surface for gradients.
pub const ON_SURFACE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SignMode {
    /// Angle-weighted pseudonormal at the closest feature. Needs a closed,
    /// consistently wound mesh.
    #[default]
    Pseudonormal,
    /// Generalized winding number; tolerates small defects, O(triangles) per query.
    WindingNumber,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    OnSurface,
    Perturbed,
}

#[derive(Clone, Debug)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub kind: SampleKind,
    /// Outward unit normals, for on-surface samples.
    pub normals: Option<Vec<Vec3>>,
}

/// Signed-distance and surface-sampling queries against a fixed mesh.
#[derive(Clone, Debug)]
pub struct SdfOracle {
    mesh: TriangleMesh,
    bvh: TriangleBvh,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    /// Per triangle, per local edge.
    edge_normals: Vec<[Vec3; 3]>,
    area_cdf: Vec<f64>,
    sign_mode: SignMode,
}

impl SdfOracle {
    pub fn new(mesh: TriangleMesh) -> Result<Self> {
        Self::with_sign_mode(mesh, SignMode::default())
    }

    pub fn with_sign_mode(mesh: TriangleMesh, sign_mode: SignMode) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let tris = mesh.triangles();
        let face_normals = mesh.face_normals();

        let mut vertex_normals = vec![Vec3::zeros(); mesh.vertices().len()];
        for (t, tri) in tris.iter().enumerate() {
            let c = mesh.corners(t);
            for i in 0..3 {
                let e1 = c[(i + 1) % 3] - c[i];
                let e2 = c[(i + 2) % 3] - c[i];
                let (n1, n2) = (e1.norm(), e2.norm());
                if n1 > 0.0 && n2 > 0.0 {
                    let angle = (e1.dot(&e2) / (n1 * n2)).clamp(-1.0, 1.0).acos();
                    vertex_normals[tri[i] as usize] += face_normals[t] * angle;
                }
            }
        }

        let mut edge_sum: HashMap<(u32, u32), Vec3> = HashMap::with_capacity(tris.len() * 2);
        for (t, tri) in tris.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                *edge_sum.entry((a.min(b), a.max(b))).or_insert_with(Vec3::zeros) += face_normals[t];
            }
        }
        let edge_normals = tris
            .iter()
            .map(|tri| {
                [0, 1, 2].map(|e| {
                    let (a, b) = (tri[e], tri[(e + 1) % 3]);
                    edge_sum[&(a.min(b), a.max(b))]
                })
            })
            .collect();

        let area_cdf = area_cdf(&mesh)?;

        let bvh = TriangleBvh::build(&mesh);
        Ok(Self {
            mesh,
            bvh,
            face_normals,
            vertex_normals,
            edge_normals,
            area_cdf,
            sign_mode,
        })
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn sign_mode(&self) -> SignMode {
        self.sign_mode
    }

    pub fn closest(&self, x: &Vec3) -> ClosestPoint {
        self.bvh.closest(&self.mesh, x).expect("oracle mesh is non-empty")
    }

    pub fn unsigned_distance(&self, x: &Vec3) -> f64 {
        self.closest(x).dist2.sqrt()
    }

    /// Pseudonormal of the closest feature (not normalized).
    fn pseudonormal(&self, c: &ClosestPoint) -> Vec3 {
        match c.feature {
            Feature::Face => self.face_normals[c.triangle],
            Feature::Edge(e) => self.edge_normals[c.triangle][e as usize],
            Feature::Vertex(v) => {
                self.vertex_normals[self.mesh.triangles()[c.triangle][v as usize] as usize]
            }
        }
    }

    /// +1 outside, -1 inside.
    fn sign(&self, x: &Vec3, c: &ClosestPoint) -> f64 {
        match self.sign_mode {
            SignMode::Pseudonormal => {
                if (x - c.point).dot(&self.pseudonormal(c)) < 0.0 {
                    -1.0
                } else {
                    1.0
                }
            }
            SignMode::WindingNumber => {
                if self.winding_number(x).abs() > 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Negative inside, positive outside, zero on the surface.
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        let c = self.closest(x);
        let d = c.dist2.sqrt();
        if d == 0.0 {
            0.0
        } else {
            self.sign(x, &c) * d
        }
    }

    /// Unit direction from the closest surface point toward `x`, negated inside.
    /// On the surface this is the normalized pseudonormal.
    pub fn sdf_gradient(&self, x: &Vec3) -> Vec3 {
        let c = self.closest(x);
        self.gradient_at(x, &c)
    }

    fn gradient_at(&self, x: &Vec3, c: &ClosestPoint) -> Vec3 {
        let d = c.dist2.sqrt();
        // Below this the direction to the closest point is rounding noise
        // (surface samples land ~1e-17 off their triangle).
        if d > ON_SURFACE_TOL {
            (x - c.point) / d * self.sign(x, c)
        } else {
            let n = self.pseudonormal(c);
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                self.face_normals[c.triangle]
            }
        }
    }

    /// Signed distances and gradients for a batch, in input order.
    pub fn signed_distances_and_gradients(&self, points: &[Vec3]) -> Vec<(f64, Vec3)> {
        points
            .par_iter()
            .map(|x| {
                let c = self.closest(x);
                let d = c.dist2.sqrt();
                let s = if d > 0.0 { self.sign(x, &c) } else { 0.0 };
                (s * d, self.gradient_at(x, &c))
            })
            .collect()
    }

    pub fn signed_distances(&self, points: &[Vec3]) -> Vec<f64> {
        points.par_iter().map(|x| self.signed_distance(x)).collect()
    }

    /// Generalized winding number (solid angle sum over 4π).
    pub fn winding_number(&self, x: &Vec3) -> f64 {
        let mut total = 0.0;
        for t in 0..self.mesh.triangles().len() {
            let [a, b, c] = self.mesh.corners(t);
            let (a, b, c) = (a - x, b - x, c - x);
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let num = a.dot(&b.cross(&c));
            let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            total += 2.0 * num.atan2(den);
        }
        total / (4.0 * std::f64::consts::PI)
    }

    fn sample_triangle_point(&self, rng: &mut ChaCha8Rng) -> (usize, Vec3) {
        sample_on(&self.mesh, &self.area_cdf, rng)
    }

    /// Area-uniform points on the surface with their face normals.
    pub fn sample_surface(&self, count: usize, seed: u64) -> SurfaceSamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(count);
        let mut normals = Vec::with_capacity(count);
        for _ in 0..count {
            let (t, p) = self.sample_triangle_point(&mut rng);
            points.push(p);
            normals.push(self.face_normals[t]);
        }
        SurfaceSamples {
            points,
            kind: SampleKind::OnSurface,
            normals: Some(normals),
        }
    }

    /// Surface samples offset by isotropic Gaussian noise of variance `sigma2`.
    /// The base points are exactly `sample_surface(count, seed)`; the offsets
    /// come from a separate stream of the same seed.
    pub fn sample_near_surface(&self, count: usize, sigma2: f64, seed: u64) -> Result<SurfaceSamples> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(invalid(format!("near-surface variance must be positive, got {sigma2}")));
        }
        let normal = Normal::new(0.0, sigma2.sqrt()).expect("positive std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut points = self.sample_surface(count, seed).points;
        for p in &mut points {
            *p += Vec3::from_fn(|_, _| normal.sample(&mut rng));
        }
        Ok(SurfaceSamples {
            points,
            kind: SampleKind::Perturbed,
            normals: None,
        })
    }
}
