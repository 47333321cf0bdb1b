//! `extract` and `inspect`.

use std::path::{Path, PathBuf};

use anyhow::Context;
use msdf_core::extraction::{marching_cubes_dense, marching_cubes_local};
use msdf_core::geometry::{load_mesh, write_obj};
use msdf_core::msdf::io as msdf_io;
use msdf_flow::Checkpoint;
use serde_json::json;

use crate::config::{config_error, RunConfig};
use crate::pool::{run_jobs, AppendLog};
use crate::Outcome;

pub const TIMING_CSV: &str = "extract_timing.csv";
pub const TIMING_HEADER: &str = "shape_id,resolution,method,cells_evaluated,seconds";

/// Files with extension `ext` among `inputs`, expanding directories (one
/// level, sorted by name).
pub fn collect_files(inputs: &[PathBuf], ext: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e == ext))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn file_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| "shape".into(), |s| s.to_string_lossy().into_owned())
}

pub fn cmd_extract(
    inputs: &[PathBuf],
    out_dir: &Path,
    resolution: Option<usize>,
    cfg: &RunConfig,
    workers: usize,
) -> anyhow::Result<Outcome> {
    let resolution = resolution.unwrap_or(cfg.extract_resolution);
    if resolution < 2 {
        return Err(config_error("resolution must be at least 2"));
    }
    let methods = cfg.extract_methods()?;
    let files = collect_files(inputs, "msdf")?;
    if files.is_empty() {
        return Err(config_error("no .msdf inputs"));
    }
    cfg.write_to_dir(out_dir)?;
    let log = AppendLog::open(&out_dir.join(TIMING_CSV), TIMING_HEADER)?;
    let results = run_jobs(&files, workers, |path| -> anyhow::Result<()> {
        let id = file_id(path);
        let (x, _) = msdf_io::load(path)?;
        for &(name, local) in &methods {
            let (mesh, stats) = if local {
                marching_cubes_local(&x, resolution)?
            } else {
                marching_cubes_dense(&x, resolution)?
            };
            let obj = if methods.len() == 1 {
                out_dir.join(format!("{id}.obj"))
            } else {
                out_dir.join(format!("{id}_{name}.obj"))
            };
            if mesh.is_empty() {
                log::warn!("{id}: empty zero level set, no mesh written");
            } else {
                write_obj(&mesh, &obj)?;
            }
            log.append(&format!("{id},{resolution},{name},{},{:.6}", stats.cells_evaluated, stats.seconds))?;
            println!(
                "{id} {name}: {} triangles, {}/{} cells, {:.3}s",
                mesh.triangles().len(),
                stats.cells_evaluated,
                stats.cells_total,
                stats.seconds
            );
        }
        Ok(())
    });
    let mut out = Outcome::default();
    for (path, r) in files.iter().zip(results) {
        match r {
            Ok(()) => out.processed += 1,
            Err(e) => {
                log::error!("{}: {e:#}", path.display());
                out.failed += 1;
            }
        }
    }
    Ok(out)
}

/// A JSON summary of a `.msdf` file, a checkpoint or a mesh.
pub fn inspect(path: &Path) -> anyhow::Result<serde_json::Value> {
    let ext = path.extension().map(|e| e.to_string_lossy().to_lowercase()).unwrap_or_default();
    match ext.as_str() {
        "msdf" => {
            let (x, stats) = msdf_io::load(path)?;
            let (mut lo, mut hi) = ([f32::INFINITY; 3], [f32::NEG_INFINITY; 3]);
            for c in x.centers() {
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
            let smin = x.scales().iter().copied().fold(f32::INFINITY, f32::min);
            let smax = x.scales().iter().copied().fold(f32::NEG_INFINITY, f32::max);
            Ok(json!({
                "kind": "msdf",
                "n": x.n(),
                "k": x.k(),
                "d": x.d(),
                "params": x.param_count(),
                "center_min": lo,
                "center_max": hi,
                "scale_min": smin,
                "scale_max": smax,
                "channel_stats": stats.map(|s| s.to_array()),
            }))
        }
        "ckpt" => {
            let ck = Checkpoint::load(path)?;
            Ok(json!({
                "kind": "checkpoint",
                "params": ck.params.iter().map(|(_, t)| t.data().len()).sum::<usize>(),
                "has_ema": ck.ema.is_some(),
                "meta": ck.meta,
            }))
        }
        _ => {
            let mesh = load_mesh(path)?;
            let bounds = mesh.bounds().map(|(lo, hi)| [[lo.x, lo.y, lo.z], [hi.x, hi.y, hi.z]]);
            Ok(json!({
                "kind": "mesh",
                "vertices": mesh.vertices().len(),
                "triangles": mesh.triangles().len(),
                "watertight": mesh.is_watertight(),
                "euler_characteristic": mesh.euler_characteristic(),
                "area": mesh.area(),
                "bounds": bounds,
            }))
        }
    }
}
