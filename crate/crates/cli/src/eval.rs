//! `eval-gen`: set metrics between generated meshes and a reference manifest.

use std::path::{Path, PathBuf};

use msdf_core::metrics::{set_metrics, write_metrics_csv, DistanceKind, PointCloud};

use crate::config::{config_error, RunConfig};
use crate::extract::{collect_files, file_id};
use crate::fit::load_normalized;
use crate::manifest::Manifest;
use crate::pool::{run_jobs, shape_seed, write_atomic};
use crate::Outcome;

/// Point clouds of the meshes that load; failures are logged per file.
fn clouds(items: &[(String, PathBuf)], n: usize, seed: u64, workers: usize) -> (Vec<PointCloud>, usize) {
    let loaded = run_jobs(items, workers, |(id, path)| -> anyhow::Result<PointCloud> {
        let mesh = load_normalized(path)?;
        Ok(PointCloud::from_mesh(id.clone(), &mesh, n, shape_seed(seed, id))?)
    });
    let mut ok = Vec::new();
    let mut failed = 0;
    for ((id, path), r) in items.iter().zip(loaded) {
        match r {
            Ok(c) => ok.push(c),
            Err(e) => {
                log::error!("{id} ({}): {e:#}", path.display());
                failed += 1;
            }
        }
    }
    (ok, failed)
}

pub fn cmd_eval_gen(
    gen_dir: &Path,
    ref_manifest: &Path,
    split: Option<&str>,
    out_csv: &Path,
    cfg: &RunConfig,
    workers: usize,
) -> anyhow::Result<Outcome> {
    let reference = Manifest::load(ref_manifest)?.filter_split(split)?;
    let generated: Vec<(String, PathBuf)> = collect_files(&[gen_dir.to_path_buf()], "obj")?
        .into_iter()
        .map(|p| (file_id(&p), p))
        .collect();
    if generated.is_empty() {
        return Err(config_error(format!("no .obj files in {}", gen_dir.display())));
    }
    let refs: Vec<(String, PathBuf)> = reference.records.iter().map(|r| (r.id.clone(), r.mesh.clone())).collect();
    let kinds = cfg.distance_kinds()?;
    let dir = out_csv.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    cfg.write_to_dir(dir)?;
    let mut rows = Vec::new();
    let mut out = Outcome::default();
    for kind in kinds {
        let n = match kind {
            DistanceKind::Cd => cfg.cd_points,
            DistanceKind::Emd => cfg.emd_points,
        };
        // Generated and reference clouds draw from disjoint seed streams.
        let (mut g, gf) = clouds(&generated, n, cfg.seed, workers);
        let (mut r, rf) = clouds(&refs, n, cfg.seed ^ 0x5eed_0f_4ef5, workers);
        out.failed = out.failed.max(gf + rf);
        let m = g.len().min(r.len());
        if m == 0 {
            anyhow::bail!("no usable meshes for {kind}");
        }
        if g.len() != r.len() {
            log::warn!("set sizes differ ({} generated, {} reference); using the first {m} of each", g.len(), r.len());
            g.truncate(m);
            r.truncate(m);
        }
        let metrics = set_metrics(&g, &r, kind)?;
        println!(
            "{kind}: COV {:.2}%  MMD {:.4e}  1-NNA {:.2}%",
            100.0 * metrics.cov,
            metrics.mmd,
            100.0 * metrics.nna
        );
        rows.extend(metrics.rows(kind, g.len(), r.len(), n, cfg.seed));
        out.processed = m;
    }
    let mut buf = Vec::new();
    write_metrics_csv(&rows, &mut buf)?;
    write_atomic(out_csv, &buf)?;
    Ok(out)
}
