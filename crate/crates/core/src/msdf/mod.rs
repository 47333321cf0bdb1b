//! The Mosaic-SDF representation.

mod boxtree;
mod field;
pub mod finetune;
pub mod init;
pub mod io;
pub mod normalize;

pub use boxtree::BoxTree;
pub use field::{eval_terms, Evaluator, GridTerm};
pub use finetune::{fine_tune, fine_tune_on, FineTuneConfig, FineTuneReport, SamplePool};
pub use init::{covering_scale, covering_scale_with_margin, initialize, initialize_with, InitConfig};
pub use normalize::{normalize_channels, ChannelStats};

use crate::error::{invalid, Result};

/// Axis coordinates of the canonical lattice: `(2j - k - 1) / (k - 1)` for `j = 1..=k`.
pub fn lattice_axis(k: usize) -> Vec<f64> {
    (1..=k)
        .map(|j| (2.0 * j as f64 - k as f64 - 1.0) / (k as f64 - 1.0))
        .collect()
}

/// The `k³` lattice nodes in storage order (x fastest).
pub fn lattice(k: usize) -> Vec<[f64; 3]> {
    let axis = lattice_axis(k);
    let mut out = Vec::with_capacity(k * k * k);
    for &z in &axis {
        for &y in &axis {
            for &x in &axis {
                out.push([x, y, z]);
            }
        }
    }
    out
}

/// A set of `n` local grids `(p_i, s_i, V_i)`, each `V_i` holding `k³` SDF
/// samples at `p_i + s_i·G`.
#[derive(Clone, Debug, PartialEq)]
pub struct MosaicSdf {
    k: usize,
    centers: Vec<[f32; 3]>,
    scales: Vec<f32>,
    values: Vec<f32>,
}

impl MosaicSdf {
    pub fn new(k: usize, centers: Vec<[f32; 3]>, scales: Vec<f32>, values: Vec<f32>) -> Result<Self> {
        if k < 2 {
            return Err(invalid(format!("grid resolution k must be at least 2, got {k}")));
        }
        let n = centers.len();
        if n == 0 {
            return Err(invalid("a mosaic needs at least one grid"));
        }
        if scales.len() != n || values.len() != n * k * k * k {
            return Err(invalid(format!(
                "inconsistent sizes: {n} centers, {} scales, {} values for k={k}",
                scales.len(),
                values.len()
            )));
        }
        if centers.iter().flatten().chain(&values).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite center or value"));
        }
        if let Some(s) = scales.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(invalid(format!("scales must be positive and finite, got {s}")));
        }
        Ok(Self {
            k,
            centers,
            scales,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.centers.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Row width of the matrix view: 3 + 1 + k³.
    pub fn d(&self) -> usize {
        row_width(self.k)
    }

    pub fn param_count(&self) -> usize {
        self.n() * self.d()
    }

    pub fn centers(&self) -> &[[f32; 3]] {
        &self.centers
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn grid_values(&self, i: usize) -> &[f32] {
        let g = self.k * self.k * self.k;
        &self.values[i * g..(i + 1) * g]
    }

    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator::new(self)
    }

    /// Row-major `n × d` matrix with rows `[p, s, V]`.
    pub fn to_matrix(&self) -> Vec<f32> {
        let g = self.k * self.k * self.k;
        let mut out = Vec::with_capacity(self.param_count());
        for i in 0..self.n() {
            out.extend_from_slice(&self.centers[i]);
            out.push(self.scales[i]);
            out.extend_from_slice(&self.values[i * g..(i + 1) * g]);
        }
        out
    }

    pub fn from_matrix(k: usize, matrix: &[f32]) -> Result<Self> {
        let d = row_width(k);
        if k < 2 || matrix.is_empty() || matrix.len() % d != 0 {
            return Err(invalid(format!("matrix of {} entries is not n × {d}", matrix.len())));
        }
        let n = matrix.len() / d;
        let mut centers = Vec::with_capacity(n);
        let mut scales = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n * (d - 4));
        for row in matrix.chunks_exact(d) {
            centers.push([row[0], row[1], row[2]]);
            scales.push(row[3]);
            values.extend_from_slice(&row[4..]);
        }
        Self::new(k, centers, scales, values)
    }

    /// Reorders grids jointly: grid `j` of the result is grid `perm[j]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let d = self.d();
        let m = self.to_matrix();
        let mut out = Vec::with_capacity(m.len());
        for &i in perm {
            out.extend_from_slice(&m[i * d..(i + 1) * d]);
        }
        Self::from_matrix(self.k, &out)
    }
}

pub fn row_width(k: usize) -> usize {
    4 + k * k * k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_for_k7() {
        let axis = lattice_axis(7);
        let expect = [-1.0, -2.0 / 3.0, -1.0 / 3.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in axis.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let g = lattice(7);
        assert_eq!(g.len(), 343);
        assert_eq!(g[1], [axis[1], -1.0, -1.0]);
        assert_eq!(g[7], [-1.0, axis[1], -1.0]);
        assert_eq!(g[49], [-1.0, -1.0, axis[1]]);
    }

    #[test]
    fn matrix_round_trip_and_width() {
        let k = 3;
        let x = MosaicSdf::new(
            k,
            vec![[0.1, 0.2, 0.3], [-0.5, 0.0, 0.25]],
            vec![0.2, 0.4],
            (0..54).map(|i| i as f32 * 0.01).collect(),
        )
        .unwrap();
        assert_eq!(x.d(), 31);
        let m = x.to_matrix();
        assert_eq!(m.len(), 2 * 31);
        assert_eq!(MosaicSdf::from_matrix(k, &m).unwrap(), x);
        let p = x.permuted(&[1, 0]).unwrap();
        assert_eq!(p.centers()[0], [-0.5, 0.0, 0.25]);
        assert_eq!(p.grid_values(1), x.grid_values(0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(MosaicSdf::new(1, vec![[0.0; 3]], vec![1.0], vec![0.0]).is_err());
        assert!(MosaicSdf::new(2, vec![[0.0; 3]], vec![0.0], vec![0.0; 8]).is_err());
        assert!(MosaicSdf::new(2, vec![[0.0; 3]], vec![1.0], vec![0.0; 7]).is_err());
        assert!(MosaicSdf::new(2, vec![[f32::NAN, 0.0, 0.0]], vec![1.0], vec![0.0; 8]).is_err());
    }
}
