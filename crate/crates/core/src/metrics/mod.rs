//! Point-cloud distances (Chamfer, exact EMD) and the set-level generative
//! metrics COV, MMD and 1-NNA built on top of them.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{farthest_points, sample_mesh_surface, TriangleMesh};

/// Largest cloud accepted by [`emd`]. The Hungarian solver is cubic.
pub const EMD_MAX_POINTS: usize = 512;

/// Surface samples drawn per requested point before farthest-point thinning.
const OVERSAMPLE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub id: String,
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(id: impl Into<String>, points: Vec<[f64; 3]>) -> Result<Self> {
        let id = id.into();
        if points.is_empty() {
            return Err(Error::InvalidArgument(format!("point cloud {id:?} is empty")));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { id, points })
    }

    /// `n` farthest-point samples from a dense area-uniform sampling of `mesh`.
    pub fn from_mesh(id: impl Into<String>, mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Self> {
        let dense = sample_mesh_surface(mesh, n * OVERSAMPLE, seed)?;
        let picked = farthest_points(&dense, n, seed)?;
        Self::new(id, picked.iter().map(|p| [p.x, p.y, p.z]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn check_nonempty(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("chamfer distance of an empty cloud".into()));
    }
    Ok(())
}

fn sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Sum over `from` of the squared distance to the nearest point of `to`.
fn one_sided(from: &[[f64; 3]], to: &[[f64; 3]]) -> Result<f64> {
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(to)
        .map_err(|e| Error::InvalidArgument(format!("kd-tree construction failed: {e:?}")))?;
    Ok(from
        .iter()
        .map(|p| tree.query(p).nearest_one::<SquaredEuclidean<f64>>().execute().distance)
        .sum())
}

/// Chamfer distance: squared nearest-neighbor distances summed over both
/// directions.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(one_sided(a, b)? + one_sided(b, a)?)
}

/// Quadratic-time Chamfer distance.
pub fn chamfer_brute(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    check_nonempty(a, b)?;
    let side = |x: &[[f64; 3]], y: &[[f64; 3]]| -> f64 {
        x.iter().map(|p| y.iter().map(|q| sq(p, q)).fold(f64::INFINITY, f64::min)).sum()
    };
    Ok(side(a, b) + side(b, a))
}

/// Minimum-cost assignment for a square cost matrix. Returns, for each row,
/// its assigned column.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // Potentials formulation with 1-based sentinel column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if matched[j] > 0 {
            assign[matched[j] - 1] = j - 1;
        }
    }
    assign
}

fn euclidean_costs(a: &[[f64; 3]], b: &[[f64; 3]]) -> Vec<Vec<f64>> {
    a.iter().map(|p| b.iter().map(|q| sq(p, q).sqrt()).collect()).collect()
}

/// Earth mover's distance: total Euclidean cost of the optimal bijection.
pub fn emd(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("EMD needs equal sizes, got {} and {}", a.len(), b.len())));
    }
    if a.len() > EMD_MAX_POINTS {
        return Err(Error::InvalidArgument(format!(
            "EMD supports at most {EMD_MAX_POINTS} points, got {}",
            a.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("EMD of empty clouds".into()));
    }
    let cost = euclidean_costs(a, b);
    let assign = hungarian(&cost);
    Ok(assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistanceKind {
    Cd,
    Emd,
}

impl DistanceKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cd => "cd",
            Self::Emd => "emd",
        }
    }

    pub fn distance(self, a: &PointCloud, b: &PointCloud) -> Result<f64> {
        match self {
            Self::Cd => chamfer(&a.points, &b.points),
            Self::Emd => emd(&a.points, &b.points),
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cd" => Ok(Self::Cd),
            "emd" => Ok(Self::Emd),
            _ => Err(Error::InvalidArgument(format!("unknown distance {s:?} (expected cd or emd)"))),
        }
    }
}

/// Row-major `a.len() × b.len()` matrix of pairwise distances.
pub fn distance_matrix(a: &[PointCloud], b: &[PointCloud], kind: DistanceKind) -> Result<Vec<Vec<f64>>> {
    a.par_iter()
        .map(|x| b.iter().map(|y| kind.distance(x, y)).collect::<Result<Vec<_>>>())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetMetrics {
    /// Fraction of reference shapes that are some generated shape's nearest reference.
    pub cov: f64,
    pub mmd: f64,
    /// Leave-one-out 1-NN accuracy over the union, in [0, 1].
    pub nna: f64,
    /// Every pairwise distance was zero, so the nearest neighbors are arbitrary.
    pub degenerate: bool,
}

/// Index of the smallest entry, skipping `skip`. Ties keep the first.
fn argmin(row: impl Iterator<Item = f64>, skip: Option<usize>) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (j, d) in row.enumerate() {
        if Some(j) != skip && d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Set metrics from precomputed distances: `gr` is generated × reference,
/// `gg` and `rr` the within-set blocks.
pub fn set_metrics_from_matrices(gr: &[Vec<f64>], gg: &[Vec<f64>], rr: &[Vec<f64>]) -> Result<SetMetrics> {
    let (ng, nr) = (gr.len(), rr.len());
    if ng == 0 || nr == 0 {
        return Err(Error::InvalidArgument("set metrics need non-empty sets".into()));
    }
    if ng != nr {
        return Err(Error::InvalidArgument(format!(
            "1-NNA needs equal set sizes, got {ng} generated and {nr} reference"
        )));
    }
    if gr.iter().any(|r| r.len() != nr) || gg.len() != ng || gg.iter().any(|r| r.len() != ng) || rr.iter().any(|r| r.len() != nr) {
        return Err(Error::InvalidArgument("distance matrix shapes do not match".into()));
    }

    let mut covered = vec![false; nr];
    for row in gr {
        covered[argmin(row.iter().copied(), None).0] = true;
    }
    let cov = covered.iter().filter(|&&c| c).count() as f64 / nr as f64;

    let mmd = (0..nr)
        .map(|j| gr.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / nr as f64;

    // Union order: generated first, then reference.
    let mut correct = 0usize;
    for i in 0..ng {
        let row = gg[i].iter().chain(gr[i].iter()).copied();
        if argmin(row, Some(i)).0 < ng {
            correct += 1;
        }
    }
    for j in 0..nr {
        let row = gr.iter().map(|r| r[j]).chain(rr[j].iter().copied());
        if argmin(row, Some(ng + j)).0 >= ng {
            correct += 1;
        }
    }
    let nna = correct as f64 / (ng + nr) as f64;

    let off_diagonal_zero = |m: &[Vec<f64>]| {
        m.iter().enumerate().all(|(i, r)| r.iter().enumerate().all(|(j, &d)| i == j || d == 0.0))
    };
    let degenerate = gr.iter().flatten().all(|&d| d == 0.0) && off_diagonal_zero(gg) && off_diagonal_zero(rr);
    if degenerate {
        log::warn!("all pairwise distances are zero; set metrics are not meaningful");
    }
    Ok(SetMetrics { cov, mmd, nna, degenerate })
}

/// COV, MMD and 1-NNA between generated and reference clouds.
pub fn set_metrics(generated: &[PointCloud], reference: &[PointCloud], kind: DistanceKind) -> Result<SetMetrics> {
    let gr = distance_matrix(generated, reference, kind)?;
    let gg = distance_matrix(generated, generated, kind)?;
    let rr = distance_matrix(reference, reference, kind)?;
    set_metrics_from_matrices(&gr, &gg, &rr)
}

pub const METRICS_HEADER: &str = "metric,distance_kind,value,n_generated,n_reference,n_points,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: &'static str,
    pub kind: DistanceKind,
    pub value: f64,
    pub n_generated: usize,
    pub n_reference: usize,
    pub n_points: usize,
    pub seed: u64,
}

impl SetMetrics {
    /// One CSV row per metric. COV and 1-NNA are reported in percent.
    pub fn rows(&self, kind: DistanceKind, n_generated: usize, n_reference: usize, n_points: usize, seed: u64) -> Vec<MetricRow> {
        [("cov", 100.0 * self.cov), ("mmd", self.mmd), ("1-nna", 100.0 * self.nna)]
            .into_iter()
            .map(|(metric, value)| MetricRow { metric, kind, value, n_generated, n_reference, n_points, seed })
            .collect()
    }
}

pub fn write_metrics_csv(rows: &[MetricRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.9e},{},{},{},{}",
            r.metric, r.kind, r.value, r.n_generated, r.n_reference, r.n_points, r.seed
        )?;
    }
    Ok(())
}
