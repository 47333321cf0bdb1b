//! Bounding volume hierarchy over triangles for closest-point queries.

use super::mesh::{TriangleMesh, Vec3};

const LEAF_SIZE: usize = 4;

/// Which part of a triangle the closest point lies on. Edge `e` joins local
/// corners `e` and `(e + 1) % 3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Vertex(u8),
    Edge(u8),
    Face,
}

#[derive(Clone, Copy, Debug)]
pub struct ClosestPoint {
    pub point: Vec3,
    pub dist2: f64,
    pub triangle: usize,
    pub feature: Feature,
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection).
pub fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Feature::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Feature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Feature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}

#[derive(Clone, Copy, Debug)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: first primitive slot; inner: index of the right child (left is next).
    start: u32,
    /// Leaf: primitive count; inner: 0.
    count: u32,
}

fn dist2_to_box(p: &Vec3, lo: &Vec3, hi: &Vec3) -> f64 {
    let mut d = 0.0;
    for a in 0..3 {
        let e = (lo[a] - p[a]).max(p[a] - hi[a]).max(0.0);
        d += e * e;
    }
    d
}

#[derive(Clone, Debug)]
pub struct TriangleBvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl TriangleBvh {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let n = mesh.triangles().len();
        let boxes: Vec<(Vec3, Vec3, Vec3)> = (0..n)
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                let lo = a.inf(&b).inf(&c);
                let hi = a.sup(&b).sup(&c);
                (lo, hi, (a + b + c) / 3.0)
            })
            .collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        if n > 0 {
            Self::split(&boxes, &mut order, 0, n, &mut nodes);
        }
        Self { nodes, order }
    }

    fn split(boxes: &[(Vec3, Vec3, Vec3)], order: &mut [u32], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
        let slice = &order[start..end];
        let (mut lo, mut hi) = (boxes[slice[0] as usize].0, boxes[slice[0] as usize].1);
        let (mut clo, mut chi) = (boxes[slice[0] as usize].2, boxes[slice[0] as usize].2);
        for &i in slice {
            let (l, h, c) = &boxes[i as usize];
            lo = lo.inf(l);
            hi = hi.sup(h);
            clo = clo.inf(c);
            chi = chi.sup(c);
        }
        let id = nodes.len();
        nodes.push(Node {
            lo,
            hi,
            start: start as u32,
            count: (end - start) as u32,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let ext = chi - clo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            boxes[a as usize].2[axis]
                .total_cmp(&boxes[b as usize].2[axis])
                .then(a.cmp(&b))
        });
        Self::split(boxes, order, start, mid, nodes);
        let right = Self::split(boxes, order, mid, end, nodes);
        nodes[id].start = right as u32;
        nodes[id].count = 0;
        id
    }

    /// Closest surface point to `p`. Ties keep the first triangle found.
    pub fn closest(&self, mesh: &TriangleMesh, p: &Vec3) -> Option<ClosestPoint> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = ClosestPoint {
            point: Vec3::zeros(),
            dist2: f64::INFINITY,
            triangle: usize::MAX,
            feature: Feature::Face,
        };
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, 0.0));
        while let Some((id, bound)) = stack.pop() {
            if bound >= best.dist2 {
                continue;
            }
            let node = &self.nodes[id as usize];
            if node.count > 0 {
                let s = node.start as usize;
                for &t in &self.order[s..s + node.count as usize] {
                    let [a, b, c] = mesh.corners(t as usize);
                    let (q, feature) = closest_on_triangle(p, &a, &b, &c);
                    let d2 = (q - p).norm_squared();
                    if d2 < best.dist2 {
                        best = ClosestPoint {
                            point: q,
                            dist2: d2,
                            triangle: t as usize,
                            feature,
                        };
                    }
                }
                continue;
            }
            let (l, r) = (id + 1, node.start);
            let dl = dist2_to_box(p, &self.nodes[l as usize].lo, &self.nodes[l as usize].hi);
            let dr = dist2_to_box(p, &self.nodes[r as usize].lo, &self.nodes[r as usize].hi);
            // Visit the nearer child first.
            if dl <= dr {
                stack.push((r, dr));
                stack.push((l, dl));
            } else {
                stack.push((l, dl));
                stack.push((r, dr));
            }
        }
        Some(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triangle_regions() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        let cases = [
            (Vec3::new(-1.0, -1.0, 0.0), Vec3::zeros(), Feature::Vertex(0)),
            (Vec3::new(2.0, -0.5, 0.0), Vec3::x(), Feature::Vertex(1)),
            (Vec3::new(-0.5, 2.0, 1.0), Vec3::y(), Feature::Vertex(2)),
            (Vec3::new(0.5, -1.0, 0.0), Vec3::new(0.5, 0.0, 0.0), Feature::Edge(0)),
            (Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.5, 0.5, 0.0), Feature::Edge(1)),
            (Vec3::new(-1.0, 0.5, 0.0), Vec3::new(0.0, 0.5, 0.0), Feature::Edge(2)),
            (Vec3::new(0.2, 0.3, 4.0), Vec3::new(0.2, 0.3, 0.0), Feature::Face),
        ];
        for (p, q, f) in cases {
            let (got, feature) = closest_on_triangle(&p, &a, &b, &c);
            assert!((got - q).norm() < 1e-15, "{p:?}");
            assert_eq!(feature, f, "{p:?}");
        }
    }

    #[test]
    fn matches_linear_scan() {
        let mesh = primitives::torus(0.6, 0.25, 20, 10);
        let bvh = TriangleBvh::build(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let p = Vec3::from_fn(|_, _| rng.random_range(-1.2..1.2));
            let brute = (0..mesh.triangles().len())
                .map(|t| {
                    let [a, b, c] = mesh.corners(t);
                    (closest_on_triangle(&p, &a, &b, &c).0 - p).norm_squared()
                })
                .fold(f64::INFINITY, f64::min);
            let got = bvh.closest(&mesh, &p).unwrap();
            assert_eq!(got.dist2, brute);
        }
    }
}
