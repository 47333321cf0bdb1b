//! Zero level-set extraction with marching cubes, and mesh-to-mesh Chamfer.
//!
//! The lattice has `R` nodes per axis over `[-1, 1]³`. A node is inside when
//! its value is negative. The lattice is closed by a virtual ring of outside
//! nodes one spacing `h` beyond the cube, holding the value `h`, so a shape
//! touching the cube boundary still yields a closed surface. Vertices are
//! shared between cells through their lattice edge, and cells are visited slab
//! by slab in a fixed order so the output is deterministic.

mod tables;

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::bvh::TriangleBvh;
use crate::geometry::{sample_mesh_surface, SdfOracle, TriangleMesh, Vec3};
use crate::msdf::MosaicSdf;

pub use tables::{CORNERS, EDGES, TRIANGLES};

/// A scalar field over space.
pub trait ScalarField: Sync {
    fn value(&self, x: &[f64; 3]) -> f64;
}

impl<F: Fn(&[f64; 3]) -> f64 + Sync> ScalarField for F {
    fn value(&self, x: &[f64; 3]) -> f64 {
        self(x)
    }
}

impl ScalarField for crate::msdf::Evaluator<'_> {
    fn value(&self, x: &[f64; 3]) -> f64 {
        self.eval(x)
    }
}

impl ScalarField for SdfOracle {
    fn value(&self, x: &[f64; 3]) -> f64 {
        self.signed_distance(&Vec3::new(x[0], x[1], x[2]))
    }
}

/// Closed axis-aligned box `[center - half, center + half]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveBox {
    pub center: [f64; 3],
    pub half: f64,
}

/// Work done by one extraction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExtractStats {
    pub resolution: usize,
    pub cells_total: usize,
    pub cells_evaluated: usize,
    pub nodes_evaluated: usize,
    pub seconds: f64,
}

impl ExtractStats {
    pub fn cell_fraction(&self) -> f64 {
        self.cells_evaluated as f64 / self.cells_total.max(1) as f64
    }
}

#[inline]
fn coord(i: usize, r: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (r - 1) as f64
}

/// Coordinate of node `i` of the padded lattice, whose node `i` is real node `i - 1`.
#[inline]
fn padded_coord(i: usize, r: usize) -> f64 {
    -1.0 + 2.0 * (i as f64 - 1.0) / (r - 1) as f64
}

/// Marks cells meeting any (slightly enlarged) box. The index ranges are
/// widened by one cell on each side so rounding can only add cells.
fn mark_cells(boxes: &[ActiveBox], r: usize) -> Vec<bool> {
    let c = r - 1;
    let h = 2.0 / c as f64;
    let mut marked = vec![false; c * c * c];
    for b in boxes {
        let ext = b.half * (1.0 + 1e-9);
        let range = |a: usize| {
            let lo = ((b.center[a] - ext + 1.0) / h).floor() - 1.0;
            let hi = ((b.center[a] + ext + 1.0) / h).floor() + 1.0;
            if hi < 0.0 || lo > (c - 1) as f64 {
                return None;
            }
            Some((lo.max(0.0) as usize, (hi.min((c - 1) as f64)) as usize))
        };
        let (Some(rx), Some(ry), Some(rz)) = (range(0), range(1), range(2)) else {
            continue;
        };
        for z in rz.0..=rz.1 {
            for y in ry.0..=ry.1 {
                let row = (z * c + y) * c;
                marked[row + rx.0..=row + rx.1].iter_mut().for_each(|m| *m = true);
            }
        }
    }
    marked
}

type Tri = [(u64, [f64; 3]); 3];

/// Triangles of one row of padded cells, with vertices keyed by padded
/// lattice edge. `r` is the real resolution.
fn row_triangles(
    lo: &[f64],
    hi: &[f64],
    r: usize,
    y: usize,
    z: usize,
    marked: Option<&[bool]>,
) -> Vec<Tri> {
    let p = r + 2;
    let c = p - 1;
    let mut out = Vec::new();
    for x in 0..c {
        if let Some(m) = marked {
            if !m[(z * c + y) * c + x] {
                continue;
            }
        }
        let mut vals = [0.0; 8];
        let mut idx = [[0usize; 3]; 8];
        let mut case = 0usize;
        for (k, off) in CORNERS.iter().enumerate() {
            let (i, j, l) = (x + off[0], y + off[1], z + off[2]);
            let layer = if off[2] == 0 { lo } else { hi };
            vals[k] = layer[j * p + i];
            idx[k] = [i, j, l];
            if vals[k] < 0.0 {
                case |= 1 << k;
            }
        }
        if case == 0 || case == 255 {
            continue;
        }
        let vertex = |e: i8| {
            let [a, b] = EDGES[e as usize];
            // Canonical orientation: from the lower lattice node.
            let (a, b) = if idx[a] < idx[b] { (a, b) } else { (b, a) };
            let axis = (0..3).find(|&t| idx[a][t] != idx[b][t]).unwrap();
            let node = (idx[a][2] * p + idx[a][1]) * p + idx[a][0];
            let key = node as u64 * 3 + axis as u64;
            let t = vals[a] / (vals[a] - vals[b]);
            let pa = idx[a].map(|i| padded_coord(i, r));
            let pb = idx[b].map(|i| padded_coord(i, r));
            let p = [0, 1, 2].map(|q| pa[q] + t * (pb[q] - pa[q]));
            (key, p)
        };
        for tri in TRIANGLES[case].chunks_exact(3) {
            if tri[0] < 0 {
                break;
            }
            // The table winds triangles inward for a negative interior.
            out.push([vertex(tri[0]), vertex(tri[2]), vertex(tri[1])]);
        }
    }
    out
}

/// Evaluates the nodes of layer `z` that `needed` selects (all when `None`);
/// others are left at `+inf`. Nodes flagged in `enclosed` get a negative sign.
fn eval_layer(
    field: &dyn ScalarField,
    r: usize,
    z: usize,
    needed: Option<&[bool]>,
    enclosed: Option<&[bool]>,
) -> (Vec<f64>, usize) {
    let zc = coord(z, r);
    let rows: Vec<(Vec<f64>, usize)> = (0..r)
        .into_par_iter()
        .map(|y| {
            let yc = coord(y, r);
            let mut count = 0;
            let row = (0..r)
                .map(|x| {
                    if needed.is_some_and(|n| !n[y * r + x]) {
                        return f64::INFINITY;
                    }
                    count += 1;
                    let v = field.value(&[coord(x, r), yc, zc]);
                    if enclosed.is_some_and(|e| e[(z * r + y) * r + x]) {
                        -v.abs().max(f64::MIN_POSITIVE)
                    } else {
                        v
                    }
                })
                .collect();
            (row, count)
        })
        .collect();
    let count = rows.iter().map(|r| r.1).sum();
    (rows.into_iter().flat_map(|r| r.0).collect(), count)
}

/// Embeds a real layer (or nothing, for the two outer layers) in the padded
/// lattice, surrounded by the ring value.
fn pad_layer(real: Option<&[f64]>, r: usize) -> Vec<f64> {
    let p = r + 2;
    let ring = 2.0 / (r - 1) as f64;
    let mut out = vec![ring; p * p];
    if let Some(real) = real {
        for y in 0..r {
            out[(y + 1) * p + 1..(y + 1) * p + 1 + r].copy_from_slice(&real[y * r..(y + 1) * r]);
        }
    }
    out
}

/// Cell mask over the padded lattice: the real marks shifted by one, and every
/// ring cell. Ring cells need no field evaluations of their own.
fn pad_marks(marked: &[bool], r: usize) -> Vec<bool> {
    let (c, cp) = (r - 1, r + 1);
    let mut out = vec![true; cp * cp * cp];
    for z in 0..c {
        for y in 0..c {
            for x in 0..c {
                out[((z + 1) * cp + y + 1) * cp + x + 1] = marked[(z * c + y) * c + x];
            }
        }
    }
    out
}

/// Nodes of layer `z` touched by a marked cell in slab `z - 1` or `z`.
fn needed_nodes(marked: &[bool], r: usize, z: usize) -> Vec<bool> {
    let c = r - 1;
    let mut need = vec![false; r * r];
    for slab in [z.wrapping_sub(1), z] {
        if slab >= c {
            continue;
        }
        for y in 0..c {
            for x in 0..c {
                if marked[(slab * c + y) * c + x] {
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        need[(y + dy) * r + x + dx] = true;
                    }
                }
            }
        }
    }
    need
}

fn extract(
    field: &dyn ScalarField,
    r: usize,
    marked: Option<&[bool]>,
    enclosed: Option<&[bool]>,
    start: Instant,
) -> Result<(TriangleMesh, ExtractStats)> {
    let c = r - 1;
    let mut stats = ExtractStats {
        resolution: r,
        cells_total: c * c * c,
        cells_evaluated: marked.map_or(c * c * c, |m| m.iter().filter(|&&b| b).count()),
        ..Default::default()
    };
    let padded_marks = marked.map(|m| pad_marks(m, r));

    // Padded layer `z`; layers 0 and r + 1 are the ring.
    let mut layer = |z: usize| {
        if z == 0 || z == r + 1 {
            return pad_layer(None, r);
        }
        let need = marked.map(|m| needed_nodes(m, r, z - 1));
        let (values, n) = eval_layer(field, r, z - 1, need.as_deref(), enclosed);
        stats.nodes_evaluated += n;
        pad_layer(Some(&values), r)
    };
    let mut lo = layer(0);
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut welded: HashMap<u64, u32> = HashMap::new();
    for z in 0..=r {
        let hi = layer(z + 1);
        let rows: Vec<Vec<Tri>> = (0..=r)
            .into_par_iter()
            .map(|y| row_triangles(&lo, &hi, r, y, z, padded_marks.as_deref()))
            .collect();
        for tri in rows.into_iter().flatten() {
            let ids = tri.map(|(key, p)| {
                *welded.entry(key).or_insert_with(|| {
                    vertices.push(Vec3::new(p[0], p[1], p[2]));
                    (vertices.len() - 1) as u32
                })
            });
            // Interpolation can collapse a triangle onto a lattice node.
            if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
                triangles.push(ids);
            }
        }
        lo = hi;
    }
    stats.seconds = start.elapsed().as_secs_f64();
    Ok((TriangleMesh::new(vertices, triangles)?, stats))
}

fn check_resolution(r: usize) -> Result<()> {
    if r < 2 {
        return Err(invalid(format!("resolution must be at least 2, got {r}")));
    }
    Ok(())
}

/// Marching cubes evaluating every lattice node.
pub fn marching_cubes(field: &dyn ScalarField, resolution: usize) -> Result<(TriangleMesh, ExtractStats)> {
    check_resolution(resolution)?;
    extract(field, resolution, None, None, Instant::now())
}

/// Marching cubes restricted to cells meeting the boxes. Every level-set
/// crossing must lie inside the union of the boxes, and nodes outside it must
/// be positive; the result then equals [`marching_cubes`] exactly.
pub fn marching_cubes_in_region(
    field: &dyn ScalarField,
    boxes: &[ActiveBox],
    resolution: usize,
) -> Result<(TriangleMesh, ExtractStats)> {
    check_resolution(resolution)?;
    let start = Instant::now();
    let marked = mark_cells(boxes, resolution);
    extract(field, resolution, Some(&marked), None, start)
}

pub fn active_boxes(x: &MosaicSdf) -> Vec<ActiveBox> {
    x.centers()
        .iter()
        .zip(x.scales())
        .map(|(p, &s)| ActiveBox {
            center: p.map(f64::from),
            half: s as f64,
        })
        .collect()
}

/// Index range `[lo, hi]` of lattice positions within `[a, b]` (widened by one
/// on each side), clipped to `0..=max`.
fn index_range(a: f64, b: f64, r: usize, max: usize) -> Option<(usize, usize)> {
    let h = 2.0 / (r - 1) as f64;
    let lo = ((a + 1.0) / h).floor() - 1.0;
    let hi = ((b + 1.0) / h).floor() + 1.0;
    if hi < 0.0 || lo > max as f64 {
        return None;
    }
    Some((lo.max(0.0) as usize, hi.min(max as f64) as usize))
}

/// Lattice nodes inside the domain. Each node is tested with the same
/// arithmetic as the evaluator, `|(x - p) / s| < 1` on every axis, but only
/// against the boxes whose index range covers it.
fn domain_nodes(x: &MosaicSdf, r: usize) -> Vec<bool> {
    let mut inside = vec![false; r * r * r];
    let axis: Vec<f64> = (0..r).map(|i| coord(i, r)).collect();
    for (c, &s) in x.centers().iter().zip(x.scales()) {
        let p = c.map(f64::from);
        let s = s as f64;
        let range = |a: usize| index_range(p[a] - s, p[a] + s, r, r - 1);
        let (Some(rx), Some(ry), Some(rz)) = (range(0), range(1), range(2)) else {
            continue;
        };
        let hit = |a: usize, i: usize| ((-p[a] + axis[i]) / s).abs() < 1.0;
        let xs: Vec<usize> = (rx.0..=rx.1).filter(|&i| hit(0, i)).collect();
        for z in (rz.0..=rz.1).filter(|&i| hit(2, i)) {
            for y in (ry.0..=ry.1).filter(|&i| hit(1, i)) {
                let row = (z * r + y) * r;
                for &i in &xs {
                    inside[row + i] = true;
                }
            }
        }
    }
    inside
}

/// Nodes outside the domain that cannot reach the lattice boundary through
/// other outside nodes (6-connectivity).
fn enclosed_nodes(inside: &[bool], r: usize) -> Vec<bool> {
    let c = r - 1;
    let mut reached = vec![false; r * r * r];
    let mut queue: Vec<usize> = Vec::new();
    for z in 0..r {
        for y in 0..r {
            for x in 0..r {
                let on_boundary = [x, y, z].iter().any(|&i| i == 0 || i == c);
                let id = (z * r + y) * r + x;
                if on_boundary && !inside[id] {
                    reached[id] = true;
                    queue.push(id);
                }
            }
        }
    }
    while let Some(id) = queue.pop() {
        let (x, y, z) = (id % r, id / r % r, id / (r * r));
        let mut visit = |n: usize| {
            if !inside[n] && !reached[n] {
                reached[n] = true;
                queue.push(n);
            }
        };
        if x > 0 {
            visit(id - 1);
        }
        if x < c {
            visit(id + 1);
        }
        if y > 0 {
            visit(id - r);
        }
        if y < c {
            visit(id + r);
        }
        if z > 0 {
            visit(id - r * r);
        }
        if z < c {
            visit(id + r * r);
        }
    }
    inside.iter().zip(&reached).map(|(&i, &r)| !i && !r).collect()
}

const POSITIVE: u8 = 1;
const NEGATIVE: u8 = 2;
const MIXED: u8 = 3;

/// Sign of a block of grid values when every value is nonzero with one sign
/// and magnitudes within a factor 1e6, so no trilinear blend of them can round
/// to zero.
fn block_sign(values: impl Iterator<Item = f32>) -> u8 {
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    let (mut amin, mut amax) = (f32::INFINITY, 0f32);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
        amin = amin.min(v.abs());
        amax = amax.max(v.abs());
    }
    if !(amin >= amax * 1e-6) {
        return MIXED;
    }
    if lo > 0.0 {
        POSITIVE
    } else if hi < 0.0 {
        NEGATIVE
    } else {
        MIXED
    }
}

/// Per cell, the common sign of every grid block that can contribute to a
/// point of the cell (`0` when no grid reaches it).
fn cell_signs(x: &MosaicSdf, r: usize) -> Vec<u8> {
    let c = r - 1;
    let k = x.k();
    let half = (k - 1) as f64 / 2.0;
    let mut signs = vec![0u8; c * c * c];
    for (i, (ctr, &s)) in x.centers().iter().zip(x.scales()).enumerate() {
        let p = ctr.map(f64::from);
        let s = s as f64;
        let v = x.grid_values(i);
        // Per axis: runs of consecutive cells reading the same grid node span.
        let spans = |a: usize| -> Vec<((usize, usize), (usize, usize))> {
            let Some((lo, hi)) = index_range(p[a] - s, p[a] + s, r, c - 1) else {
                return Vec::new();
            };
            let mut runs: Vec<((usize, usize), (usize, usize))> = Vec::new();
            for cell in lo..=hi {
                let ua = (coord(cell, r) - p[a]) / s;
                let ub = (coord(cell + 1, r) - p[a]) / s;
                if ub < -1.0 - 1e-9 || ua > 1.0 + 1e-9 {
                    continue;
                }
                let g = |u: f64, d: f64| ((u.clamp(-1.0, 1.0) + 1.0) * half + d).floor().clamp(0.0, (k - 2) as f64) as usize;
                let span = (g(ua, -1e-9), g(ub, 1e-9) + 1);
                match runs.last_mut() {
                    Some((cells, last)) if *last == span && cells.1 + 1 == cell => cells.1 = cell,
                    _ => runs.push(((cell, cell), span)),
                }
            }
            runs
        };
        let (sx, sy, sz) = (spans(0), spans(1), spans(2));
        for &(cz, (z0, z1)) in &sz {
            for &(cy, (y0, y1)) in &sy {
                for &(cx, (x0, x1)) in &sx {
                    let b = block_sign(
                        (z0..=z1)
                            .flat_map(|z| (y0..=y1).flat_map(move |y| (x0..=x1).map(move |x| (z * k + y) * k + x)))
                            .map(|j| v[j]),
                    );
                    for z in cz.0..=cz.1 {
                        for y in cy.0..=cy.1 {
                            let row = (z * c + y) * c;
                            for cell in &mut signs[row + cx.0..=row + cx.1] {
                                *cell = if *cell == 0 || *cell == b { b } else { MIXED };
                            }
                        }
                    }
                }
            }
        }
    }
    signs
}

/// Unmarks interior cells whose eight corners provably share a sign:
/// corners in the domain blend grid blocks of one strict sign, and corners
/// outside keep the fallback's sign (positive, or negative when enclosed).
/// Cells on the lattice boundary stay marked because ring cells read their
/// nodes.
fn refine_marks(x: &MosaicSdf, r: usize, marked: &mut [bool], inside: &[bool], enclosed: &[bool]) {
    let c = r - 1;
    let signs = cell_signs(x, r);
    marked.par_chunks_mut(c * c).enumerate().for_each(|(z, slab)| {
        if z == 0 || z == c - 1 {
            return;
        }
        for y in 1..c - 1 {
            for xi in 1..c - 1 {
                let cell = y * c + xi;
                if !slab[cell] {
                    continue;
                }
                let sign = signs[z * c * c + cell];
                if sign != POSITIVE && sign != NEGATIVE {
                    continue;
                }
                let uniform = CORNERS.iter().all(|off| {
                    let n = ((z + off[2]) * r + y + off[1]) * r + xi + off[0];
                    if inside[n] {
                        true
                    } else {
                        enclosed[n] == (sign == NEGATIVE)
                    }
                });
                if uniform {
                    slab[cell] = false;
                }
            }
        }
    });
}

/// Extraction of a mosaic with every lattice node evaluated.
///
/// The shape interior farther than the grid scales from the surface lies
/// outside the domain, where the field only holds the positive fallback.
/// Outside nodes enclosed by the domain are therefore given a negative sign so
/// the domain boundary does not produce a spurious inner surface.
pub fn marching_cubes_dense(x: &MosaicSdf, resolution: usize) -> Result<(TriangleMesh, ExtractStats)> {
    check_resolution(resolution)?;
    let start = Instant::now();
    let e = x.evaluator();
    let enclosed = enclosed_nodes(&domain_nodes(x, resolution), resolution);
    extract(&e, resolution, None, Some(&enclosed), start)
}

/// Locality-aware extraction of a mosaic. Cells meeting no grid box have all
/// corners outside the domain and connected to each other, so they share one
/// sign. Interior cells whose contributing grid values all share one strict
/// sign are skipped as well. Neither kind holds surface, so the output equals
/// [`marching_cubes_dense`] exactly.
pub fn marching_cubes_local(x: &MosaicSdf, resolution: usize) -> Result<(TriangleMesh, ExtractStats)> {
    check_resolution(resolution)?;
    let start = Instant::now();
    let e = x.evaluator();
    let mut marked = mark_cells(&active_boxes(x), resolution);
    let inside = domain_nodes(x, resolution);
    let enclosed = enclosed_nodes(&inside, resolution);
    refine_marks(x, resolution, &mut marked, &inside, &enclosed);
    extract(&e, resolution, Some(&marked), Some(&enclosed), start)
}

/// Symmetric Chamfer distance between two surfaces: `N` area-uniform samples
/// are drawn on each mesh and the mean squared distance to the other mesh is
/// summed over both directions.
pub fn chamfer_to_mesh(a: &TriangleMesh, b: &TriangleMesh, samples: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let one_way = |from: &TriangleMesh, to: &TriangleMesh| -> Result<f64> {
        let pts = sample_mesh_surface(from, samples, seed)?;
        let bvh = TriangleBvh::build(to);
        let d: Vec<f64> = pts
            .par_iter()
            .map(|p| bvh.closest(to, p).map_or(f64::INFINITY, |c| c.dist2))
            .collect();
        Ok(d.iter().sum::<f64>() / samples as f64)
    };
    Ok(one_way(a, b)? + one_way(b, a)?)
}
