//! Triplane with summed plane features and a linear decoder:
//! `F(x) = w · (f_xy(x, y) + f_xz(x, z) + f_yz(y, z)) + b`, each plane an
//! `R × R × C` grid over `[-1, 1]²` read with bilinear interpolation.

use std::time::Instant;

use diffkit::{AdamConfig, AdamState, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::extraction::ScalarField;
use crate::msdf::finetune::Target;
use crate::msdf::SamplePool;

/// Axes read by each plane.
const PLANES: [[usize; 2]; 3] = [[0, 1], [0, 2], [1, 2]];

/// Largest `R` with `3R²C + C + 1 ≤ budget`.
pub fn triplane_resolution(budget: usize, channels: usize) -> usize {
    if budget < channels + 1 {
        return 0;
    }
    let avail = budget - channels - 1;
    let mut r = ((avail as f64) / (3 * channels) as f64).sqrt().floor() as usize;
    while r > 0 && 3 * r * r * channels > avail {
        r -= 1;
    }
    while 3 * (r + 1) * (r + 1) * channels <= avail {
        r += 1;
    }
    r
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriplaneLinear {
    resolution: usize,
    channels: usize,
    /// `[plane][v][u][c]`, channels fastest.
    planes: Vec<f32>,
    weights: Vec<f32>,
    bias: f32,
}

/// Bilinear stencil of one plane: flat corner offsets (start of the channel
/// vector) and their weights.
type Stencil = ([usize; 4], [f64; 4]);

impl TriplaneLinear {
    pub fn new(resolution: usize, channels: usize, planes: Vec<f32>, weights: Vec<f32>, bias: f32) -> Result<Self> {
        if resolution < 2 || channels == 0 {
            return Err(invalid(format!("triplane needs R ≥ 2 and C ≥ 1, got R={resolution}, C={channels}")));
        }
        if planes.len() != 3 * resolution * resolution * channels || weights.len() != channels {
            return Err(invalid("triplane parameter sizes do not match R and C"));
        }
        Ok(Self {
            resolution,
            channels,
            planes,
            weights,
            bias,
        })
    }

    /// Small random features and decoder weights of scale `1/√C`.
    pub fn random(resolution: usize, channels: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planes = (0..3 * resolution * resolution * channels)
            .map(|_| rng.random_range(-1e-2..1e-2))
            .collect();
        let a = 1.0 / (channels as f32).sqrt();
        let weights = (0..channels).map(|_| rng.random_range(-a..a)).collect();
        Self::new(resolution, channels, planes, weights, 0.0)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn planes(&self) -> &[f32] {
        &self.planes
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> f32 {
        self.bias
    }

    pub fn param_count(&self) -> usize {
        self.planes.len() + self.weights.len() + 1
    }

    fn stencil(&self, plane: usize, x: &[f64; 3]) -> Stencil {
        let r = self.resolution;
        let mut idx = [0usize; 2];
        let mut t = [0.0; 2];
        for (k, &a) in PLANES[plane].iter().enumerate() {
            let g = ((x[a].clamp(-1.0, 1.0) + 1.0) * 0.5 * (r - 1) as f64).max(0.0);
            let i = (g.floor() as usize).min(r - 2);
            idx[k] = i;
            t[k] = g - i as f64;
        }
        let c = self.channels;
        let at = |du: usize, dv: usize| ((plane * r + idx[1] + dv) * r + idx[0] + du) * c;
        (
            [at(0, 0), at(1, 0), at(0, 1), at(1, 1)],
            [
                (1.0 - t[0]) * (1.0 - t[1]),
                t[0] * (1.0 - t[1]),
                (1.0 - t[0]) * t[1],
                t[0] * t[1],
            ],
        )
    }

    /// Summed plane features at `x`.
    pub fn features(&self, x: &[f64; 3]) -> Vec<f64> {
        let mut f = vec![0.0; self.channels];
        for plane in 0..3 {
            let (off, w) = self.stencil(plane, x);
            for (o, w) in off.iter().zip(w) {
                for (fc, v) in f.iter_mut().zip(&self.planes[*o..*o + self.channels]) {
                    *fc += w * *v as f64;
                }
            }
        }
        f
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let f = self.features(x);
        f.iter().zip(&self.weights).map(|(f, w)| f * *w as f64).sum::<f64>() + self.bias as f64
    }
}

impl ScalarField for TriplaneLinear {
    fn value(&self, x: &[f64; 3]) -> f64 {
        self.eval(x)
    }
}

const CHUNK: usize = 512;

/// Mean `|F(x) - F_S(x)|` and its gradient over `[planes, weights, bias]`,
/// accumulated in point order.
pub fn loss_and_grad(tp: &TriplaneLinear, points: &[[f64; 3]], targets: &[Target]) -> (f64, Vec<f64>) {
    let c = tp.channels;
    // Per point: sign of the residual, its stencils and summed features.
    let per_point: Vec<(f64, f64, [Stencil; 3], Vec<f64>)> = points
        .par_chunks(CHUNK)
        .zip(targets.par_chunks(CHUNK))
        .flat_map_iter(|(pts, tg)| {
            pts.iter()
                .zip(tg)
                .map(|(x, t)| {
                    let st = [0, 1, 2].map(|p| tp.stencil(p, x));
                    let f = tp.features(x);
                    let v = f.iter().zip(&tp.weights).map(|(f, w)| f * *w as f64).sum::<f64>() + tp.bias as f64;
                    let r = v - t.0;
                    (r.abs(), if r < 0.0 { -1.0 } else { 1.0 }, st, f)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let m = points.len().max(1) as f64;
    let np = tp.planes.len();
    let mut grad = vec![0.0; tp.param_count()];
    let mut loss = 0.0;
    for (l, sign, st, f) in &per_point {
        loss += l;
        let g = sign / m;
        for (off, w) in st {
            for (o, bw) in off.iter().zip(w) {
                for ch in 0..c {
                    grad[o + ch] += g * bw * tp.weights[ch] as f64;
                }
            }
        }
        for ch in 0..c {
            grad[np + ch] += g * f[ch];
        }
        grad[np + c] += g;
    }
    (loss / m, grad)
}

#[derive(Clone, Debug)]
pub struct TriplaneConfig {
    pub channels: usize,
    pub steps: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub divergence_factor: f64,
    pub seed: u64,
}

impl Default for TriplaneConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            steps: 1000,
            lr: 1e-3,
            batch_size: 16_384,
            divergence_factor: 10.0,
            seed: 0,
        }
    }
}

/// Fits a triplane within `budget` parameters to the pool with the
/// absolute-error loss and Adam. Returns the model and its batch losses.
pub fn fit_triplane(pool: &SamplePool, budget: usize, config: &TriplaneConfig) -> Result<(TriplaneLinear, Vec<f64>)> {
    let r = triplane_resolution(budget, config.channels);
    if r < 2 {
        return Err(invalid(format!("budget {budget} is too small for a triplane with C={}", config.channels)));
    }
    if pool.is_empty() || config.batch_size == 0 {
        return Err(invalid("triplane fitting needs a non-empty pool and batch"));
    }
    let start = Instant::now();
    let init = TriplaneLinear::random(r, config.channels, config.seed)?;
    let c = config.channels;
    let mut store = ParamStore::new();
    store.add("planes", Tensor::new(&[3, r, r, c], init.planes.clone())?);
    store.add("weights", Tensor::new(&[c], init.weights.clone())?);
    store.add("bias", Tensor::new(&[1], vec![0.0])?);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &store,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7819_1a4e);
    let mut losses = Vec::with_capacity(config.steps);
    let mut tp = init;
    let mut pts = Vec::with_capacity(config.batch_size);
    let mut tgs = Vec::with_capacity(config.batch_size);
    for step in 0..config.steps {
        pts.clear();
        tgs.clear();
        for _ in 0..config.batch_size {
            let i = rng.random_range(0..pool.len());
            pts.push(pool.points[i]);
            tgs.push(pool.targets[i]);
        }
        let (loss, grad) = loss_and_grad(&tp, &pts, &tgs);
        if !loss.is_finite() || losses.first().is_some_and(|&l0: &f64| loss > config.divergence_factor * l0) {
            return Err(Error::Diverged(format!("triplane step {step}: loss {loss:.6e}")));
        }
        losses.push(loss);
        let np = tp.planes.len();
        let grads = vec![
            Tensor::new(&[3, r, r, c], grad[..np].iter().map(|&g| g as f32).collect())?,
            Tensor::new(&[c], grad[np..np + c].iter().map(|&g| g as f32).collect())?,
            Tensor::new(&[1], vec![grad[np + c] as f32])?,
        ];
        adam.step(&mut store, &grads)?;
        tp.planes.copy_from_slice(store.get(0).data());
        tp.weights.copy_from_slice(store.get(1).data());
        tp.bias = store.get(2).data()[0];
    }
    log::debug!(
        "triplane R={r} C={c}: loss {:.4e} -> {:.4e} in {:.1}s",
        losses.first().copied().unwrap_or(0.0),
        losses.last().copied().unwrap_or(0.0),
        start.elapsed().as_secs_f64()
    );
    Ok((tp, losses))
}
