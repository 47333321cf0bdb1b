//! `fm-train` and `fm-sample`.

use std::path::{Path, PathBuf};

use anyhow::Context;
use msdf_core::geometry::write_obj;
use msdf_core::msdf::{io as msdf_io, normalize_channels, MosaicSdf};
use msdf_flow::{sample_to_shape, train, Checkpoint, CheckpointMeta, Example, Solver, VelocityModel};

use crate::config::{config_error, RunConfig};
use crate::fit::msdf_path;
use crate::manifest::Manifest;
use crate::pool::{shape_seed, write_atomic, AppendLog};
use crate::Outcome;

pub const LOSS_CSV: &str = "loss_curve.csv";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const SAMPLES_HEADER: &str = "sample,class,omega,solver,nfe,sample_seconds,extract_seconds,status";

fn parent_dir(p: &Path) -> &Path {
    p.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

/// Loads the fitted mosaics of a manifest from `msdf_dir`.
pub fn load_dataset(msdf_dir: &Path, manifest: &Manifest) -> anyhow::Result<Vec<(MosaicSdf, usize)>> {
    let mut out = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let path = msdf_path(msdf_dir, &r.id);
        let (x, _) = msdf_io::load(&path).with_context(|| format!("loading fitted shape {}", r.id))?;
        out.push((x, r.class));
    }
    let (n, k) = (out[0].0.n(), out[0].0.k());
    if let Some((x, _)) = out.iter().find(|(x, _)| x.n() != n || x.k() != k) {
        anyhow::bail!("shapes disagree on (n, k): ({n}, {k}) vs ({}, {})", x.n(), x.k());
    }
    Ok(out)
}

/// Trains a flow model on normalized mosaics and returns its checkpoint.
pub fn train_checkpoint(data: &[(MosaicSdf, usize)], classes: usize, cfg: &RunConfig) -> anyhow::Result<(Checkpoint, Vec<f64>)> {
    let mosaics: Vec<MosaicSdf> = data.iter().map(|(x, _)| x.clone()).collect();
    let (mats, stats) = normalize_channels(&mosaics, cfg.stats_samples, cfg.seed)?;
    let (n, k) = (mosaics[0].n(), mosaics[0].k());
    let mut model_cfg = cfg.model_config(classes)?;
    model_cfg.d = msdf_core::msdf::row_width(k);
    let examples: Vec<Example> = mats
        .into_iter()
        .zip(data)
        .map(|(x, (_, c))| Example { x, class: Some(*c) })
        .collect();
    let mut model = VelocityModel::new(model_cfg, cfg.seed)?;
    let train_cfg = cfg.train_config();
    let report = train(&mut model, &examples, &train_cfg)?;
    let mut meta = CheckpointMeta::new(model_cfg, train_cfg, n, k);
    meta.class_names = (0..classes).map(|c| c.to_string()).collect();
    meta.stats = Some(stats.to_array());
    let ck = Checkpoint {
        meta,
        params: model.params().clone(),
        ema: Some(report.ema.clone()),
    };
    Ok((ck, report.losses))
}

pub fn cmd_fm_train(
    msdf_dir: &Path,
    manifest: &Path,
    split: Option<&str>,
    out_ckpt: &Path,
    cfg: &RunConfig,
) -> anyhow::Result<Outcome> {
    let manifest = Manifest::load(manifest)?.filter_split(split)?;
    let data = load_dataset(msdf_dir, &manifest)?;
    if data[0].0.k() != cfg.k {
        return Err(config_error(format!("fitted shapes have k = {}, config has k = {}", data[0].0.k(), cfg.k)));
    }
    let dir = parent_dir(out_ckpt);
    cfg.write_to_dir(dir)?;
    let (ck, losses) = train_checkpoint(&data, manifest.num_classes(), cfg)?;
    write_atomic(out_ckpt, &ck.to_bytes()?)?;
    let mut curve = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        curve.push_str(&format!("{i},{l:.9e}\n"));
    }
    std::fs::write(dir.join(LOSS_CSV), curve)?;
    let tail = &losses[losses.len().saturating_sub(100)..];
    println!(
        "fm-train: {} shapes, {} steps, loss {:.4e} -> {:.4e}",
        data.len(),
        losses.len(),
        losses.first().copied().unwrap_or(f64::NAN),
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    );
    Ok(Outcome { processed: data.len(), ..Outcome::default() })
}

/// Directory name of one guidance scale.
pub fn omega_dir(out_dir: &Path, omega: f32) -> PathBuf {
    out_dir.join(format!("omega_{omega}"))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_fm_sample(
    ckpt: &Path,
    class: Option<usize>,
    omegas: Option<Vec<f32>>,
    solver: Option<Solver>,
    count: Option<usize>,
    out_dir: &Path,
    cfg: &RunConfig,
) -> anyhow::Result<Outcome> {
    let ck = Checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let model = ck.model(cfg.use_ema)?;
    if let Some(c) = class {
        if c >= model.config().classes {
            return Err(config_error(format!("class {c} not in checkpoint ({} classes)", model.config().classes)));
        }
    }
    let stats = ck
        .meta
        .channel_stats()?
        .ok_or_else(|| anyhow::anyhow!("checkpoint has no channel statistics"))?;
    let omegas = omegas.unwrap_or_else(|| cfg.omega.clone());
    if omegas.iter().any(|w| !w.is_finite()) {
        return Err(config_error("omega must be finite"));
    }
    let solver = match solver {
        Some(s) => s,
        None => cfg.solver()?,
    };
    let count = count.unwrap_or(cfg.sample_count);
    let mut out = Outcome::default();
    for &omega in &omegas {
        let dir = omega_dir(out_dir, omega);
        cfg.write_to_dir(&dir)?;
        let log = AppendLog::open(&dir.join(SAMPLES_CSV), SAMPLES_HEADER)?;
        for i in 0..count {
            let name = format!("sample_{i:04}");
            // Same noise for every guidance scale.
            let seed = shape_seed(cfg.seed, &name);
            let class_txt = class.map_or("none".into(), |c| c.to_string());
            match sample_to_shape(&model, &stats, ck.meta.n, ck.meta.k, class, omega, solver, cfg.sample_resolution, seed) {
                Ok(g) => {
                    msdf_io::save(&g.msdf, None, dir.join(format!("{name}.msdf")))?;
                    let status = match &g.mesh {
                        Some(m) => {
                            write_obj(m, dir.join(format!("{name}.obj")))?;
                            "ok"
                        }
                        None => "empty",
                    };
                    println!(
                        "omega {omega} {name}: nfe {} sample {:.3}s extract {:.3}s {status}",
                        g.nfe, g.sample_seconds, g.extract_seconds
                    );
                    log.append(&format!(
                        "{name},{class_txt},{omega},{solver},{},{:.6},{:.6},{status}",
                        g.nfe, g.sample_seconds, g.extract_seconds
                    ))?;
                    out.processed += 1;
                }
                Err(e) => {
                    log::error!("{name} (omega {omega}): {e}");
                    log.append(&format!("{name},{class_txt},{omega},{solver},,,,failed"))?;
                    out.failed += 1;
                }
            }
        }
    }
    Ok(out)
}
