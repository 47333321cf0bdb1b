//! Fine-tuning of all grid parameters against an SDF oracle.
//!
//! The loss on a batch is the mean over in-domain points of
//! `|F(x) - F_S(x)| + λ‖∇F(x) - ∇F_S(x)‖`. Points outside the domain have no
//! interpolated value and are left out of the mean.

use std::cell::Cell;
use std::time::Instant;

use diffkit::scalar::{Real, ScalarTape, Var};
use diffkit::{AdamConfig, AdamState, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{SdfOracle, Vec3};

use super::boxtree::BoxTree;
use super::field::{eval_terms, grid_term, GridTerm};
use super::MosaicSdf;

#[derive(Clone, Debug)]
pub struct FineTuneConfig {
    pub steps: usize,
    pub lambda: f64,
    pub lr: f32,
    pub batch_size: usize,
    pub surface_points: usize,
    pub near_points: usize,
    /// Per-axis variance of the near-surface offsets.
    pub near_variance: f64,
    /// Optimize only the grid values, keeping centers and scales fixed.
    pub freeze_geometry: bool,
    /// Abort when a batch loss exceeds this multiple of the first one.
    pub divergence_factor: f64,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lambda: 0.1,
            lr: 1e-4,
            batch_size: 16_384,
            surface_points: 300_000,
            near_points: 200_000,
            near_variance: 0.01,
            freeze_geometry: false,
            divergence_factor: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct FineTuneReport {
    /// Batch loss before each step.
    pub losses: Vec<f64>,
    pub seconds: f64,
}

impl FineTuneReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Oracle targets for a point: signed distance and its gradient.
pub type Target = (f64, [f64; 3]);

/// Training points and their oracle targets.
#[derive(Clone, Debug)]
pub struct SamplePool {
    pub points: Vec<[f64; 3]>,
    pub targets: Vec<Target>,
}

impl SamplePool {
    pub fn build(oracle: &SdfOracle, surface: usize, near: usize, variance: f64, seed: u64) -> Result<Self> {
        let mut pts: Vec<Vec3> = oracle.sample_surface(surface, seed).points;
        // A different seed keeps the near-surface base points independent.
        pts.extend(oracle.sample_near_surface(near, variance, seed ^ 0x5eed_0001)?.points);
        let targets = oracle
            .signed_distances_and_gradients(&pts)
            .into_iter()
            .map(|(d, g)| (d, [g.x, g.y, g.z]))
            .collect();
        Ok(Self {
            points: pts.iter().map(|p| [p.x, p.y, p.z]).collect(),
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Parameters in `f64` with the flat layout `[p (3n), s (n), V (n·k³)]`.
#[derive(Clone, Debug)]
pub struct FlatParams {
    pub k: usize,
    pub theta: Vec<f64>,
}

impl FlatParams {
    pub fn from_msdf(x: &MosaicSdf) -> Self {
        let theta = x
            .centers()
            .iter()
            .flatten()
            .chain(x.scales())
            .chain(x.values())
            .map(|&v| v as f64)
            .collect();
        Self { k: x.k(), theta }
    }

    pub fn n(&self) -> usize {
        self.theta.len() / (4 + self.k * self.k * self.k)
    }

    fn center(&self, i: usize) -> [f64; 3] {
        [self.theta[3 * i], self.theta[3 * i + 1], self.theta[3 * i + 2]]
    }

    fn scale(&self, i: usize) -> f64 {
        self.theta[3 * self.n() + i]
    }

    fn values_offset(&self) -> usize {
        4 * self.n()
    }

    fn tree(&self) -> BoxTree {
        let n = self.n();
        BoxTree::build((0..n).map(|i| self.center(i)).collect(), (0..n).map(|i| self.scale(i)).collect())
    }
}

/// Loss of one point and its sparse parameter gradient, appended to `grads`.
/// Returns `None` when the point is outside the domain.
fn point_loss(
    params: &FlatParams,
    tree: &BoxTree,
    x: &[f64; 3],
    target: &Target,
    lambda: f64,
    tape: &mut ScalarTape,
    scratch: &mut (Vec<usize>, Vec<f64>),
    grads: &mut Vec<(u32, f64)>,
) -> Option<f64> {
    let (cand, adj) = scratch;
    cand.clear();
    tree.candidates(x, cand);
    let k = params.k;
    let n = params.n();
    let kk = k * k;
    let voff = params.values_offset();

    // Leaf bookkeeping: tape indices of the first geometry and first corner
    // leaf, grid, corner base.
    let mut leaves: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(cand.len());
    tape.clear();
    let loss = {
        let tape = &*tape;
        let mut terms: Vec<GridTerm<Var<'_>>> = Vec::with_capacity(cand.len());
        for &j in cand.iter() {
            let p = params.center(j);
            let s = params.scale(j);
            let m = (0..3).map(|a| ((x[a] - p[a]) / s).abs()).fold(0.0, f64::max);
            if !(m < 1.0) {
                continue;
            }
            let first = tape.len();
            let pv = p.map(|c| tape.var(c));
            let sv = tape.var(s);
            let base = Cell::new(0);
            let corner_first = Cell::new(0);
            let th = &params.theta;
            let term = grid_term(j, x, pv, sv, k, lambda > 0.0, |b| {
                base.set(b);
                corner_first.set(tape.len());
                let at = |o: usize| tape.var(th[voff + j * kk * k + b + o]);
                [at(0), at(1), at(k), at(k + 1), at(kk), at(kk + 1), at(kk + k), at(kk + k + 1)]
            });
            if let Some(t) = term {
                terms.push(t);
                leaves.push((first, corner_first.get(), j, base.get()));
            }
        }
        let (f, g) = eval_terms(&mut terms, lambda > 0.0)?;
        let mut loss = (f - target.0).abs();
        if lambda > 0.0 {
            let d = [g[0] - target.1[0], g[1] - target.1[1], g[2] - target.1[2]];
            let sq = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            if sq.value() > 0.0 {
                loss = loss + sq.sqrt() * lambda;
            }
        }
        tape.adjoints_into(loss, adj);
        loss.value()
    };
    for &(first, cfirst, j, base) in &leaves {
        let a = &adj[first..first + 4];
        let c8 = &adj[cfirst..cfirst + 8];
        for c in 0..3 {
            grads.push(((3 * j + c) as u32, a[c]));
        }
        grads.push(((3 * n + j) as u32, a[3]));
        let offs = [0, 1, k, k + 1, kk, kk + 1, kk + k, kk + k + 1];
        for (c, o) in offs.iter().enumerate() {
            grads.push(((voff + j * kk * k + base + o) as u32, c8[c]));
        }
    }
    Some(loss)
}

const CHUNK: usize = 512;

/// Mean loss over the in-domain points and its gradient with respect to the
/// flat parameter vector. The gradient is accumulated in point order, so the
/// result does not depend on the number of threads.
pub fn loss_and_grad(params: &FlatParams, points: &[[f64; 3]], targets: &[Target], lambda: f64) -> (f64, Vec<f64>, usize) {
    let tree = params.tree();
    let chunks: Vec<(f64, usize, Vec<(u32, f64)>)> = points
        .par_chunks(CHUNK)
        .zip(targets.par_chunks(CHUNK))
        .map(|(pts, tg)| {
            let mut tape = ScalarTape::with_capacity(4096);
            let mut scratch = (Vec::new(), Vec::new());
            let mut grads = Vec::new();
            let (mut sum, mut count) = (0.0, 0);
            for (x, t) in pts.iter().zip(tg) {
                if let Some(l) = point_loss(params, &tree, x, t, lambda, &mut tape, &mut scratch, &mut grads) {
                    sum += l;
                    count += 1;
                }
            }
            (sum, count, grads)
        })
        .collect();
    let count: usize = chunks.iter().map(|c| c.1).sum();
    let mut grad = vec![0.0; params.theta.len()];
    if count == 0 {
        return (0.0, grad, 0);
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    for (s, _, g) in &chunks {
        sum += s;
        for &(i, v) in g {
            grad[i as usize] += v;
        }
    }
    grad.iter_mut().for_each(|g| *g *= inv);
    (sum * inv, grad, count)
}

/// Runs Adam on `x` with pools drawn from `oracle`.
pub fn fine_tune(x: &MosaicSdf, oracle: &SdfOracle, config: &FineTuneConfig) -> Result<(MosaicSdf, FineTuneReport)> {
    let pool = SamplePool::build(
        oracle,
        config.surface_points,
        config.near_points,
        config.near_variance,
        config.seed,
    )?;
    fine_tune_on(x, &pool, config)
}

/// [`fine_tune`] with a prebuilt sample pool.
pub fn fine_tune_on(x: &MosaicSdf, pool: &SamplePool, config: &FineTuneConfig) -> Result<(MosaicSdf, FineTuneReport)> {
    if pool.is_empty() || config.batch_size == 0 {
        return Err(invalid("fine-tuning needs a non-empty pool and batch"));
    }
    let start = Instant::now();
    let (n, k) = (x.n(), x.k());
    let g = k * k * k;
    let mut store = ParamStore::new();
    store.add("p", Tensor::new(&[n, 3], x.centers().iter().flatten().copied().collect())?);
    store.add("s", Tensor::new(&[n], x.scales().to_vec())?);
    store.add("v", Tensor::new(&[n, g], x.values().to_vec())?);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &store,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xf17e_70e5);
    let mut report = FineTuneReport::default();
    let mut batch_pts = Vec::with_capacity(config.batch_size);
    let mut batch_tg = Vec::with_capacity(config.batch_size);

    for step in 0..config.steps {
        let theta: Vec<f64> = (0..3).flat_map(|i| store.get(i).data().to_vec()).map(f64::from).collect();
        let params = FlatParams { k, theta };
        batch_pts.clear();
        batch_tg.clear();
        for _ in 0..config.batch_size {
            let i = rng.random_range(0..pool.len());
            batch_pts.push(pool.points[i]);
            batch_tg.push(pool.targets[i]);
        }
        let (loss, grad, count) = loss_and_grad(&params, &batch_pts, &batch_tg, config.lambda);
        if count == 0 {
            return Err(Error::Diverged(format!("step {step}: no batch point lies inside any grid")));
        }
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("step {step}: non-finite loss")));
        }
        if let Some(first) = report.initial_loss() {
            if loss > config.divergence_factor * first {
                return Err(Error::Diverged(format!(
                    "step {step}: loss {loss:.6e} exceeds {}× the initial {first:.6e}",
                    config.divergence_factor
                )));
            }
        }
        report.losses.push(loss);
        if step % 100 == 0 {
            log::debug!("fine-tune step {step}: loss {loss:.6e} ({count} points in domain)");
        }

        let geo = if config.freeze_geometry { 0.0 } else { 1.0 };
        let grads = vec![
            Tensor::new(&[n, 3], grad[..3 * n].iter().map(|&v| (v * geo) as f32).collect())?,
            Tensor::new(&[n], grad[3 * n..4 * n].iter().map(|&v| (v * geo) as f32).collect())?,
            Tensor::new(&[n, g], grad[4 * n..].iter().map(|&v| v as f32).collect())?,
        ];
        // Zero gradients keep Adam's moments, and hence the update, at zero.
        adam.step(&mut store, &grads)?;
        for s in store.get_mut(1).data_mut() {
            if !(*s >= 1e-6) {
                *s = 1e-6;
            }
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    let p = store.get(0).data();
    let out = MosaicSdf::new(
        k,
        p.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        store.get(1).data().to_vec(),
        store.get(2).data().to_vec(),
    )?;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_matches_evaluator() {
        let k = 3;
        let x = MosaicSdf::new(
            k,
            vec![[0.0, 0.0, 0.0], [0.3, 0.1, 0.0]],
            vec![0.5, 0.4],
            (0..54).map(|i| ((i * 7 % 11) as f32 - 5.0) * 0.05).collect(),
        )
        .unwrap();
        let e = x.evaluator();
        let pts = vec![[0.1, 0.05, -0.02], [0.35, 0.12, 0.1], [2.0, 0.0, 0.0]];
        let tg: Vec<Target> = pts.iter().map(|_| (0.1, [0.0, 1.0, 0.0])).collect();
        let (loss, _, count) = loss_and_grad(&FlatParams::from_msdf(&x), &pts, &tg, 0.0);
        assert_eq!(count, 2);
        let expect = ((e.eval(&pts[0]) - 0.1).abs() + (e.eval(&pts[1]) - 0.1).abs()) / 2.0;
        assert!((loss - expect).abs() < 1e-12);
    }
}
