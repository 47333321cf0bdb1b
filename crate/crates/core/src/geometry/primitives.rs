//! Closed, outward-wound procedural meshes.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::mesh::{TriangleMesh, Vec3};

fn build(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> TriangleMesh {
    TriangleMesh::new(vertices, triangles).expect("procedural mesh is valid")
}

/// Axis-aligned box with 12 triangles.
pub fn cuboid(lo: Vec3, hi: Vec3) -> TriangleMesh {
    let v = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
        .collect();
    let quads = [
        [0, 2, 3, 1], // z-
        [4, 5, 7, 6], // z+
        [0, 1, 5, 4], // y-
        [2, 6, 7, 3], // y+
        [0, 4, 6, 2], // x-
        [1, 3, 7, 5], // x+
    ];
    let t = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    build(v, t)
}

/// Subdivided icosahedron projected to a sphere; `20·4^subdiv` triangles.
pub fn icosphere(subdiv: u32, radius: f64) -> TriangleMesh {
    let g = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, g, 0.0],
        [1.0, g, 0.0],
        [-1.0, -g, 0.0],
        [1.0, -g, 0.0],
        [0.0, -1.0, g],
        [0.0, 1.0, g],
        [0.0, -1.0, -g],
        [0.0, 1.0, -g],
        [g, 0.0, -1.0],
        [g, 0.0, 1.0],
        [-g, 0.0, -1.0],
        [-g, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Vec3::from(*c).normalize())
    .collect();
    let mut tris: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdiv {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    build(verts.into_iter().map(|v| v * radius).collect(), tris)
}

/// Torus around the z axis.
pub fn torus(major: f64, minor: f64, nu: u32, nv: u32) -> TriangleMesh {
    let mut verts = Vec::with_capacity((nu * nv) as usize);
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * PI * j as f64 / nv as f64;
            let r = major + minor * v.cos();
            verts.push(Vec3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    let id = |i: u32, j: u32| (i % nu) * nv + (j % nv);
    let mut tris = Vec::with_capacity((2 * nu * nv) as usize);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            tris.push([a, b, c]);
            tris.push([a, c, d]);
        }
    }
    build(verts, tris)
}

/// Closed cylinder along z, centered at the origin.
pub fn cylinder(radius: f64, height: f64, segments: u32) -> TriangleMesh {
    let h = height / 2.0;
    let mut verts = vec![Vec3::new(0.0, 0.0, -h), Vec3::new(0.0, 0.0, h)];
    for i in 0..segments {
        let a = 2.0 * PI * i as f64 / segments as f64;
        let (x, y) = (radius * a.cos(), radius * a.sin());
        verts.push(Vec3::new(x, y, -h));
        verts.push(Vec3::new(x, y, h));
    }
    let lo = |i: u32| 2 + 2 * (i % segments);
    let hi = |i: u32| 3 + 2 * (i % segments);
    let mut tris = Vec::new();
    for i in 0..segments {
        tris.push([0, lo(i + 1), lo(i)]);
        tris.push([1, hi(i), hi(i + 1)]);
        tris.push([lo(i), lo(i + 1), hi(i + 1)]);
        tris.push([lo(i), hi(i + 1), hi(i)]);
    }
    build(verts, tris)
}
