//! Dataset-level normalization of the center and scale channels.
//!
//! Normalized scales may be negative, so normalized shapes are kept as raw
//! `n × d` matrices rather than [`MosaicSdf`] values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

use super::{row_width, MosaicSdf};

/// Channel means and max-norms. The max-norm of a channel is the largest
/// absolute centered entry among the sampled entries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub p_mean: [f32; 3],
    pub p_max: f32,
    pub s_mean: f32,
    pub s_max: f32,
}

impl ChannelStats {
    /// Estimates the statistics from `sample_count` grids drawn uniformly with
    /// replacement from the whole dataset, or from every grid when the dataset
    /// has no more than `sample_count` of them.
    pub fn estimate(dataset: &[MosaicSdf], sample_count: usize, seed: u64) -> Result<Self> {
        let total: usize = dataset.iter().map(MosaicSdf::n).sum();
        if total == 0 || sample_count == 0 {
            return Err(invalid("channel statistics need a non-empty dataset"));
        }
        let offsets: Vec<usize> = dataset
            .iter()
            .scan(0, |acc, x| {
                let o = *acc;
                *acc += x.n();
                Some(o)
            })
            .collect();
        let locate = |g: usize| {
            let shape = offsets.partition_point(|&o| o <= g) - 1;
            (shape, g - offsets[shape])
        };
        let picks: Vec<(usize, usize)> = if total <= sample_count {
            (0..total).map(locate).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..sample_count).map(|_| locate(rng.random_range(0..total))).collect()
        };

        let m = picks.len() as f64;
        let mut p_mean = [0.0f64; 3];
        let mut s_mean = 0.0f64;
        for &(a, i) in &picks {
            let p = dataset[a].centers()[i];
            for ax in 0..3 {
                p_mean[ax] += p[ax] as f64;
            }
            s_mean += dataset[a].scales()[i] as f64;
        }
        let p_mean = p_mean.map(|v| (v / m) as f32);
        let s_mean = (s_mean / m) as f32;
        let mut p_max = 0.0f64;
        let mut s_max = 0.0f64;
        for &(a, i) in &picks {
            let p = dataset[a].centers()[i];
            for ax in 0..3 {
                p_max = p_max.max((p[ax] as f64 - p_mean[ax] as f64).abs());
            }
            s_max = s_max.max((dataset[a].scales()[i] as f64 - s_mean as f64).abs());
        }
        if p_max == 0.0 || s_max == 0.0 {
            return Err(invalid(format!(
                "zero max-norm in channel statistics (centers {p_max}, scales {s_max})"
            )));
        }
        Ok(Self {
            p_mean,
            p_max: p_max as f32,
            s_mean,
            s_max: s_max as f32,
        })
    }

    pub fn to_array(&self) -> [f32; 6] {
        let p = self.p_mean;
        [p[0], p[1], p[2], self.p_max, self.s_mean, self.s_max]
    }

    pub fn from_array(a: [f32; 6]) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) || !(a[3] > 0.0) || !(a[5] > 0.0) {
            return Err(invalid(format!("invalid channel statistics {a:?}")));
        }
        Ok(Self {
            p_mean: [a[0], a[1], a[2]],
            p_max: a[3],
            s_mean: a[4],
            s_max: a[5],
        })
    }

    /// Normalizes the `p` and `s` columns of an `n × d` matrix in place.
    pub fn normalize_matrix(&self, k: usize, matrix: &mut [f32]) {
        for row in matrix.chunks_exact_mut(row_width(k)) {
            for a in 0..3 {
                row[a] = ((row[a] as f64 - self.p_mean[a] as f64) / self.p_max as f64) as f32;
            }
            row[3] = ((row[3] as f64 - self.s_mean as f64) / self.s_max as f64) as f32;
        }
    }

    /// Inverse of [`ChannelStats::normalize_matrix`].
    pub fn denormalize_matrix(&self, k: usize, matrix: &mut [f32]) {
        for row in matrix.chunks_exact_mut(row_width(k)) {
            for a in 0..3 {
                row[a] = (row[a] as f64 * self.p_max as f64 + self.p_mean[a] as f64) as f32;
            }
            row[3] = (row[3] as f64 * self.s_max as f64 + self.s_mean as f64) as f32;
        }
    }

    pub fn normalize(&self, x: &MosaicSdf) -> Vec<f32> {
        let mut m = x.to_matrix();
        self.normalize_matrix(x.k(), &mut m);
        m
    }

    /// Maps a normalized matrix back to a shape. Scales that come out
    /// non-positive (possible for generated samples) are clamped to `min_scale`.
    pub fn denormalize(&self, k: usize, matrix: &[f32], min_scale: f32) -> Result<MosaicSdf> {
        let mut m = matrix.to_vec();
        self.denormalize_matrix(k, &mut m);
        for row in m.chunks_exact_mut(row_width(k)) {
            if !(row[3] >= min_scale) {
                row[3] = min_scale;
            }
        }
        MosaicSdf::from_matrix(k, &m)
    }
}

/// Estimates statistics over the dataset and returns every shape normalized.
pub fn normalize_channels(
    dataset: &[MosaicSdf],
    sample_count: usize,
    seed: u64,
) -> Result<(Vec<Vec<f32>>, ChannelStats)> {
    let stats = ChannelStats::estimate(dataset, sample_count, seed)?;
    Ok((dataset.iter().map(|x| stats.normalize(x)).collect(), stats))
}
