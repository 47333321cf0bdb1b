//! Fixed-budget comparison of representations: fit, extract, Chamfer.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{invalid, Error, Result};
use crate::extraction::{chamfer_to_mesh, marching_cubes, marching_cubes_local};
use crate::geometry::{SdfOracle, TriangleMesh};
use crate::msdf::{fine_tune_on, initialize, row_width, FineTuneConfig, SamplePool};

use super::{fit_dense_grid, fit_triplane, TriplaneConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Representation {
    /// Initialized mosaic without fine-tuning.
    MsdfInit,
    Msdf,
    DenseGrid,
    Triplane,
}

impl Representation {
    pub const ALL: [Representation; 4] = [Self::MsdfInit, Self::Msdf, Self::DenseGrid, Self::Triplane];

    pub fn name(self) -> &'static str {
        match self {
            Self::MsdfInit => "msdf_init",
            Self::Msdf => "msdf",
            Self::DenseGrid => "dense_grid",
            Self::Triplane => "triplane",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| invalid(format!("unknown representation {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub k: usize,
    pub extract_resolution: usize,
    pub chamfer_samples: usize,
    pub finetune: FineTuneConfig,
    pub triplane: TriplaneConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k: 7,
            extract_resolution: 128,
            chamfer_samples: 5000,
            finetune: FineTuneConfig::default(),
            triplane: TriplaneConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub mesh_id: String,
    pub representation: Representation,
    pub budget: usize,
    /// Parameters actually used (never above the budget).
    pub params: usize,
    pub chamfer: f64,
    pub fit_seconds: f64,
    pub extract_seconds: f64,
}

pub const SWEEP_HEADER: &str = "mesh_id,representation,budget,chamfer,fit_seconds,extract_seconds";

pub fn write_sweep_csv(rows: &[SweepRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.9e},{:.6},{:.6}",
            r.mesh_id, r.representation, r.budget, r.chamfer, r.fit_seconds, r.extract_seconds
        )?;
    }
    Ok(())
}

/// Number of mosaic grids of resolution `k` within `budget`.
pub fn msdf_grids_for_budget(budget: usize, k: usize) -> usize {
    budget / row_width(k)
}

/// Fits one representation to one shape and scores its extracted surface.
pub fn run_one(
    mesh_id: &str,
    oracle: &SdfOracle,
    pool: &SamplePool,
    rep: Representation,
    budget: usize,
    config: &SweepConfig,
) -> Result<(SweepRow, TriangleMesh)> {
    let res = config.extract_resolution;
    let fit_start = Instant::now();
    let (params, mesh, fit_seconds, extract_seconds) = match rep {
        Representation::MsdfInit | Representation::Msdf => {
            let n = msdf_grids_for_budget(budget, config.k);
            if n == 0 {
                return Err(invalid(format!("budget {budget} holds no grid of k={}", config.k)));
            }
            let mut x = initialize(oracle, n, config.k, config.seed)?;
            if rep == Representation::Msdf {
                x = fine_tune_on(&x, pool, &config.finetune)?.0;
            }
            let fit = fit_start.elapsed().as_secs_f64();
            let (mesh, stats) = marching_cubes_local(&x, res)?;
            (x.param_count(), mesh, fit, stats.seconds)
        }
        Representation::DenseGrid => {
            let g = fit_dense_grid(oracle, budget)?;
            let fit = fit_start.elapsed().as_secs_f64();
            let (mesh, stats) = marching_cubes(&g, res)?;
            (g.param_count(), mesh, fit, stats.seconds)
        }
        Representation::Triplane => {
            let (t, _) = fit_triplane(pool, budget, &config.triplane)?;
            let fit = fit_start.elapsed().as_secs_f64();
            let (mesh, stats) = marching_cubes(&t, res)?;
            (t.param_count(), mesh, fit, stats.seconds)
        }
    };
    assert!(params <= budget, "{rep} uses {params} parameters for budget {budget}");
    let chamfer = if mesh.is_empty() {
        f64::INFINITY
    } else {
        chamfer_to_mesh(&mesh, oracle.mesh(), config.chamfer_samples, config.seed)?
    };
    let row = SweepRow {
        mesh_id: mesh_id.to_string(),
        representation: rep,
        budget,
        params,
        chamfer,
        fit_seconds,
        extract_seconds,
    };
    Ok((row, mesh))
}

/// Every (mesh, budget, representation) combination. The sample pool is built
/// once per mesh and shared by the trained representations.
pub fn budget_sweep(
    meshes: &[(String, SdfOracle)],
    budgets: &[usize],
    reps: &[Representation],
    config: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (id, oracle) in meshes {
        let ft = &config.finetune;
        let pool = SamplePool::build(oracle, ft.surface_points, ft.near_points, ft.near_variance, config.seed)?;
        for &budget in budgets {
            for &rep in reps {
                let (row, _) = run_one(id, oracle, &pool, rep, budget, config)?;
                log::info!("{id} {rep} budget {budget}: chamfer {:.4e}", row.chamfer);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for r in Representation::ALL {
            assert_eq!(r.name().parse::<Representation>().unwrap(), r);
        }
        assert!("grid".parse::<Representation>().is_err());
    }

    #[test]
    fn grids_for_budget() {
        assert_eq!(msdf_grids_for_budget(355_328, 7), 1024);
        assert_eq!(msdf_grids_for_budget(355_327, 7), 1023);
    }

    #[test]
    fn csv_header_and_row() {
        let row = SweepRow {
            mesh_id: "a".into(),
            representation: Representation::DenseGrid,
            budget: 1000,
            params: 1000,
            chamfer: 1.5e-4,
            fit_seconds: 0.25,
            extract_seconds: 0.5,
        };
        let mut buf = Vec::new();
        write_sweep_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(SWEEP_HEADER));
        assert_eq!(lines.next(), Some("a,dense_grid,1000,1.500000000e-4,0.250000,0.500000"));
    }
}
