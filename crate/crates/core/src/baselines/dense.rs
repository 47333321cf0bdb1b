//! Dense SDF grid over `[-1, 1]³` with trilinear interpolation.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::extraction::ScalarField;
use crate::geometry::{SdfOracle, Vec3};

/// Largest `R` with `R³ ≤ budget`.
pub fn dense_resolution(budget: usize) -> usize {
    let mut r = (budget as f64).cbrt().floor() as usize;
    while r > 0 && r * r * r > budget {
        r -= 1;
    }
    while (r + 1) * (r + 1) * (r + 1) <= budget {
        r += 1;
    }
    r
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrid {
    resolution: usize,
    values: Vec<f32>,
}

impl DenseGrid {
    pub fn new(resolution: usize, values: Vec<f32>) -> Result<Self> {
        if resolution < 2 || values.len() != resolution.pow(3) {
            return Err(invalid(format!(
                "dense grid needs R ≥ 2 and R³ values, got R={resolution} with {} values",
                values.len()
            )));
        }
        Ok(Self { resolution, values })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    /// Node coordinate along one axis.
    pub fn coord(&self, i: usize) -> f64 {
        -1.0 + 2.0 * i as f64 / (self.resolution - 1) as f64
    }

    /// Trilinear interpolation; points outside the cube are clamped onto it.
    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let r = self.resolution;
        let mut idx = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let g = ((x[a].clamp(-1.0, 1.0) + 1.0) * 0.5 * (r - 1) as f64).max(0.0);
            let i = (g.floor() as usize).min(r - 2);
            idx[a] = i;
            t[a] = g - i as f64;
        }
        let v = |dx: usize, dy: usize, dz: usize| {
            self.values[((idx[2] + dz) * r + idx[1] + dy) * r + idx[0] + dx] as f64
        };
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c0 = lerp(lerp(v(0, 0, 0), v(1, 0, 0), t[0]), lerp(v(0, 1, 0), v(1, 1, 0), t[0]), t[1]);
        let c1 = lerp(lerp(v(0, 0, 1), v(1, 0, 1), t[0]), lerp(v(0, 1, 1), v(1, 1, 1), t[0]), t[1]);
        lerp(c0, c1, t[2])
    }
}

impl ScalarField for DenseGrid {
    fn value(&self, x: &[f64; 3]) -> f64 {
        self.eval(x)
    }
}

/// Samples the oracle at the nodes of the largest grid within `budget`.
pub fn fit_dense_grid(oracle: &SdfOracle, budget: usize) -> Result<DenseGrid> {
    let r = dense_resolution(budget);
    if r < 2 {
        return Err(invalid(format!("budget {budget} is below the 8 parameters of a 2³ grid")));
    }
    let c = |i: usize| -1.0 + 2.0 * i as f64 / (r - 1) as f64;
    let nodes: Vec<Vec3> = (0..r * r * r)
        .map(|i| Vec3::new(c(i % r), c(i / r % r), c(i / (r * r))))
        .collect();
    let values = nodes
        .par_chunks(4096)
        .flat_map_iter(|chunk| chunk.iter().map(|p| oracle.signed_distance(p) as f32).collect::<Vec<_>>())
        .collect();
    DenseGrid::new(r, values)
}
