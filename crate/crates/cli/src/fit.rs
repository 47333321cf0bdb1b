//! `fit` and `bench-rep`: per-shape mosaic fitting and the representation sweep.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use msdf_core::baselines::{budget_sweep, write_sweep_csv, SweepRow};
use msdf_core::extraction::{chamfer_to_mesh, marching_cubes_local};
use msdf_core::geometry::{load_mesh, SdfOracle, TriangleMesh};
use msdf_core::msdf::{fine_tune_on, initialize_with, io as msdf_io, MosaicSdf, SamplePool};

use crate::config::RunConfig;
use crate::manifest::{Manifest, ManifestRecord};
use crate::pool::{csv_field, run_jobs, shape_seed, write_atomic, AppendLog};
use crate::Outcome;

pub const FIT_LOG: &str = "fit_log.csv";
pub const FIT_LOG_HEADER: &str = "shape_id,status,init_loss,final_loss,chamfer,seconds,message";

/// Loads a mesh and maps it into the `[-1, 1]³` frame.
pub fn load_normalized(path: &Path) -> anyhow::Result<TriangleMesh> {
    let mesh = load_mesh(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(mesh.normalize_to_unit_cube()?)
}

#[derive(Clone, Debug)]
pub struct FitSummary {
    pub init_loss: f64,
    pub final_loss: f64,
    pub chamfer: f64,
    pub seconds: f64,
}

/// Initialization then fine-tuning of one normalized mesh, scored by the
/// Chamfer distance of its extracted surface to the mesh.
pub fn fit_mesh(mesh: &TriangleMesh, cfg: &RunConfig, seed: u64) -> anyhow::Result<(MosaicSdf, FitSummary)> {
    let start = Instant::now();
    let oracle = SdfOracle::with_sign_mode(mesh.clone(), cfg.sign_mode()?)?;
    let x = initialize_with(&oracle, cfg.n, cfg.k, seed, &cfg.init_config())?;
    let ft = cfg.finetune_config(seed);
    let (x, report) = if ft.steps == 0 {
        (x, Default::default())
    } else {
        let pool = SamplePool::build(&oracle, ft.surface_points, ft.near_points, ft.near_variance, seed)?;
        fine_tune_on(&x, &pool, &ft)?
    };
    let seconds = start.elapsed().as_secs_f64();
    let (surface, _) = marching_cubes_local(&x, cfg.extract_resolution)?;
    let chamfer = if surface.is_empty() {
        f64::INFINITY
    } else {
        chamfer_to_mesh(&surface, mesh, cfg.chamfer_samples, seed)?
    };
    let summary = FitSummary {
        init_loss: report.initial_loss().unwrap_or(f64::NAN),
        final_loss: report.final_loss().unwrap_or(f64::NAN),
        chamfer,
        seconds,
    };
    Ok((x, summary))
}

pub fn msdf_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.msdf"))
}

enum FitResult {
    Done,
    Skipped,
    Failed,
}

fn fit_record(rec: &ManifestRecord, out_dir: &Path, cfg: &RunConfig, log: &AppendLog) -> FitResult {
    let target = msdf_path(out_dir, &rec.id);
    if target.exists() {
        log::info!("{}: output exists, skipping", rec.id);
        return FitResult::Skipped;
    }
    let seed = shape_seed(cfg.seed, &rec.id);
    let run = || -> anyhow::Result<FitSummary> {
        let mesh = load_normalized(&rec.mesh)?;
        let (x, summary) = fit_mesh(&mesh, cfg, seed)?;
        write_atomic(&target, &msdf_io::to_bytes(&x, None))?;
        Ok(summary)
    };
    let (row, result) = match run() {
        Ok(s) => {
            log::info!("{}: chamfer {:.4e} in {:.1}s", rec.id, s.chamfer, s.seconds);
            let row = format!(
                "{},ok,{:.9e},{:.9e},{:.9e},{:.3},",
                rec.id, s.init_loss, s.final_loss, s.chamfer, s.seconds
            );
            (row, FitResult::Done)
        }
        Err(e) => {
            log::error!("{}: {e:#}", rec.id);
            (format!("{},failed,,,,,{}", rec.id, csv_field(&format!("{e:#}"))), FitResult::Failed)
        }
    };
    if let Err(e) = log.append(&row) {
        log::error!("{}: cannot write fit log: {e}", rec.id);
    }
    result
}

pub fn cmd_fit(manifest: &Path, out_dir: &Path, cfg: &RunConfig, workers: usize) -> anyhow::Result<Outcome> {
    let manifest = Manifest::load(manifest)?;
    cfg.write_to_dir(out_dir)?;
    let log = AppendLog::open(&out_dir.join(FIT_LOG), FIT_LOG_HEADER)?;
    let results = run_jobs(&manifest.records, workers, |rec| fit_record(rec, out_dir, cfg, &log));
    let mut out = Outcome::default();
    for r in results {
        match r {
            FitResult::Done => out.processed += 1,
            FitResult::Skipped => out.skipped += 1,
            FitResult::Failed => out.failed += 1,
        }
    }
    println!("fit: {} processed, {} skipped, {} failed", out.processed, out.skipped, out.failed);
    Ok(out)
}

pub fn cmd_bench_rep(
    manifest: &Path,
    out_csv: &Path,
    budgets: Option<Vec<usize>>,
    cfg: &RunConfig,
    workers: usize,
) -> anyhow::Result<Outcome> {
    let manifest = Manifest::load(manifest)?;
    let budgets = budgets.unwrap_or_else(|| cfg.budgets.clone());
    if budgets.is_empty() || budgets.contains(&0) {
        return Err(crate::config::config_error("budgets must be positive"));
    }
    let reps = cfg.representations()?;
    let dir = out_csv.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    cfg.write_to_dir(dir)?;
    let per_shape = run_jobs(&manifest.records, workers, |rec| -> anyhow::Result<Vec<SweepRow>> {
        let mesh = load_normalized(&rec.mesh)?;
        let oracle = SdfOracle::with_sign_mode(mesh, cfg.sign_mode()?)?;
        let seed = shape_seed(cfg.seed, &rec.id);
        Ok(budget_sweep(&[(rec.id.clone(), oracle)], &budgets, &reps, &cfg.sweep_config(seed))?)
    });
    let mut rows = Vec::new();
    let mut out = Outcome::default();
    for (rec, r) in manifest.records.iter().zip(per_shape) {
        match r {
            Ok(mut r) => {
                rows.append(&mut r);
                out.processed += 1;
            }
            Err(e) => {
                log::error!("{}: {e:#}", rec.id);
                out.failed += 1;
            }
        }
    }
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    write_atomic(out_csv, &buf)?;
    println!("bench-rep: {} rows for {} shapes, {} failed", rows.len(), out.processed, out.failed);
    Ok(out)
}
