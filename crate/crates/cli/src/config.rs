//! Flat `key = value` run configuration.
//!
//! Lists are comma separated. Lines starting with `#` are comments. Unknown
//! keys are rejected.

use std::fmt;
use std::path::Path;

use msdf_core::baselines::{Representation, SweepConfig, TriplaneConfig};
use msdf_core::geometry::SignMode;
use msdf_core::metrics::DistanceKind;
use msdf_core::msdf::{FineTuneConfig, InitConfig};
use msdf_flow::{ModelConfig, Solver, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const CONFIG_FILE: &str = "run_config.txt";

/// Bad configuration or arguments. Maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    // Mosaic fitting.
    pub n: usize,
    pub k: usize,
    pub lambda: f64,
    pub steps: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub surface_points: usize,
    pub near_points: usize,
    pub near_variance: f64,
    pub freeze_geometry: bool,
    pub init_samples: usize,
    /// `pseudonormal` or `winding`.
    pub sign_mode: String,

    // Surfaces and scoring.
    pub extract_resolution: usize,
    /// `local`, `dense` or `both`.
    pub extract_method: String,
    pub chamfer_samples: usize,

    // Representation sweep.
    pub budgets: Vec<usize>,
    pub representations: Vec<String>,
    pub triplane_channels: usize,
    pub triplane_steps: usize,
    pub triplane_lr: f32,

    // Flow model and training.
    pub fm_hidden: usize,
    pub fm_layers: usize,
    pub fm_heads: usize,
    pub fm_mlp_ratio: usize,
    pub fm_steps: usize,
    pub fm_batch_size: usize,
    pub fm_lr: f32,
    pub fm_warmup_steps: usize,
    pub sigma: f64,
    pub p_uncond: f64,
    pub ema_decay: f32,
    pub use_ema: bool,
    pub stats_samples: usize,

    // Sampling.
    pub omega: Vec<f32>,
    pub solver: String,
    pub sample_count: usize,
    pub sample_resolution: usize,

    // Evaluation.
    pub distance_kinds: Vec<String>,
    pub cd_points: usize,
    pub emd_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ft = FineTuneConfig::default();
        let tc = TrainConfig::default();
        Self {
            seed: 0,
            n: 1024,
            k: 7,
            lambda: ft.lambda,
            steps: ft.steps,
            lr: ft.lr,
            batch_size: ft.batch_size,
            surface_points: ft.surface_points,
            near_points: ft.near_points,
            near_variance: ft.near_variance,
            freeze_geometry: false,
            init_samples: InitConfig::default().surface_samples,
            sign_mode: "pseudonormal".into(),
            extract_resolution: 128,
            extract_method: "local".into(),
            chamfer_samples: 5000,
            budgets: vec![355_328],
            representations: Representation::ALL.iter().map(|r| r.name().to_string()).collect(),
            triplane_channels: 32,
            triplane_steps: 1000,
            triplane_lr: 1e-3,
            fm_hidden: 64,
            fm_layers: 2,
            fm_heads: 4,
            fm_mlp_ratio: 4,
            fm_steps: tc.steps,
            fm_batch_size: tc.batch_size,
            fm_lr: tc.lr,
            fm_warmup_steps: tc.warmup_steps,
            sigma: tc.sigma,
            p_uncond: tc.p_uncond,
            ema_decay: tc.ema_decay,
            use_ema: true,
            stats_samples: 100_000,
            omega: vec![0.0],
            solver: Solver::dopri5().to_string(),
            sample_count: 8,
            sample_resolution: 128,
            distance_kinds: vec!["cd".into(), "emd".into()],
            cd_points: 5000,
            emd_points: 512,
        }
    }
}

fn parse_scalar(raw: &str, like: &Value) -> Option<Value> {
    match like {
        Value::String(_) => Some(Value::String(raw.to_string())),
        _ => serde_json::from_str(raw).ok(),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let Value::Object(mut map) = serde_json::to_value(Self::default())? else {
            unreachable!("config serializes to an object")
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| config_error(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            Self::set(&mut map, key, raw).map_err(|e| config_error(format!("line {}: {e}", lineno + 1)))?;
        }
        let cfg: Self =
            serde_json::from_value(Value::Object(map)).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(map: &mut Map<String, Value>, key: &str, raw: &str) -> Result<(), String> {
        let current = map.get(key).ok_or_else(|| format!("unknown key {key:?}"))?;
        let value = match current {
            Value::Array(items) => {
                let like = items.first().cloned().unwrap_or(Value::String(String::new()));
                let parsed: Option<Vec<Value>> = raw
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_scalar(s, &like))
                    .collect();
                Value::Array(parsed.ok_or_else(|| format!("bad list for {key}: {raw:?}"))?)
            }
            other => parse_scalar(raw, other).ok_or_else(|| format!("bad value for {key}: {raw:?}"))?,
        };
        map.insert(key.to_string(), value);
        Ok(())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(config_error(msg)) };
        check(self.n > 0, "n must be positive")?;
        check(self.k >= 2, "k must be at least 2")?;
        check(self.lambda >= 0.0, "lambda must be non-negative")?;
        check(self.lr > 0.0 && self.fm_lr > 0.0 && self.triplane_lr > 0.0, "learning rates must be positive")?;
        check(self.batch_size > 0 && self.fm_batch_size > 0, "batch sizes must be positive")?;
        check(self.extract_resolution >= 2 && self.sample_resolution >= 2, "resolutions must be at least 2")?;
        check(self.chamfer_samples > 0 && self.cd_points > 0 && self.emd_points > 0, "point counts must be positive")?;
        check(!self.budgets.is_empty() && !self.omega.is_empty(), "budgets and omega need at least one entry")?;
        check(self.omega.iter().all(|w| w.is_finite()), "omega must be finite")?;
        check(self.emd_points <= msdf_core::metrics::EMD_MAX_POINTS, "emd_points exceeds the exact solver's limit")?;
        self.sign_mode()?;
        self.extract_methods()?;
        self.representations()?;
        self.solver()?;
        self.distance_kinds()?;
        self.model_config(1)?.validate().map_err(|e| config_error(e.to_string()))?;
        self.train_config().validate().map_err(|e| config_error(e.to_string()))?;
        Ok(())
    }

    pub fn sign_mode(&self) -> anyhow::Result<SignMode> {
        match self.sign_mode.as_str() {
            "pseudonormal" => Ok(SignMode::Pseudonormal),
            "winding" => Ok(SignMode::WindingNumber),
            s => Err(config_error(format!("unknown sign_mode {s:?}"))),
        }
    }

    /// Extraction paths named by `extract_method`, as `(name, local)`.
    pub fn extract_methods(&self) -> anyhow::Result<Vec<(&'static str, bool)>> {
        match self.extract_method.as_str() {
            "local" => Ok(vec![("local", true)]),
            "dense" => Ok(vec![("dense", false)]),
            "both" => Ok(vec![("dense", false), ("local", true)]),
            s => Err(config_error(format!("unknown extract_method {s:?}"))),
        }
    }

    pub fn representations(&self) -> anyhow::Result<Vec<Representation>> {
        self.representations
            .iter()
            .map(|s| s.parse().map_err(|e: msdf_core::Error| config_error(e.to_string())))
            .collect()
    }

    pub fn solver(&self) -> anyhow::Result<Solver> {
        self.solver.parse().map_err(|e: msdf_flow::FlowError| config_error(e.to_string()))
    }

    pub fn distance_kinds(&self) -> anyhow::Result<Vec<DistanceKind>> {
        self.distance_kinds
            .iter()
            .map(|s| s.parse().map_err(|e: msdf_core::Error| config_error(e.to_string())))
            .collect()
    }

    pub fn finetune_config(&self, seed: u64) -> FineTuneConfig {
        FineTuneConfig {
            steps: self.steps,
            lambda: self.lambda,
            lr: self.lr,
            batch_size: self.batch_size,
            surface_points: self.surface_points,
            near_points: self.near_points,
            near_variance: self.near_variance,
            freeze_geometry: self.freeze_geometry,
            seed,
            ..FineTuneConfig::default()
        }
    }

    pub fn init_config(&self) -> InitConfig {
        InitConfig {
            surface_samples: self.init_samples,
            ..InitConfig::default()
        }
    }

    pub fn sweep_config(&self, seed: u64) -> SweepConfig {
        SweepConfig {
            k: self.k,
            extract_resolution: self.extract_resolution,
            chamfer_samples: self.chamfer_samples,
            finetune: self.finetune_config(seed),
            triplane: TriplaneConfig {
                channels: self.triplane_channels,
                steps: self.triplane_steps,
                lr: self.triplane_lr,
                seed,
                ..TriplaneConfig::default()
            },
            seed,
        }
    }

    pub fn model_config(&self, classes: usize) -> anyhow::Result<ModelConfig> {
        Ok(ModelConfig {
            d: msdf_core::msdf::row_width(self.k),
            hidden: self.fm_hidden,
            layers: self.fm_layers,
            heads: self.fm_heads,
            classes,
            mlp_ratio: self.fm_mlp_ratio,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.fm_steps,
            batch_size: self.fm_batch_size,
            lr: self.fm_lr,
            warmup_steps: self.fm_warmup_steps,
            p_uncond: self.p_uncond,
            sigma: self.sigma,
            ema_decay: self.ema_decay,
            seed: self.seed,
        }
    }

    /// Every key with its effective value, sorted by key.
    pub fn to_text(&self) -> String {
        let Ok(Value::Object(map)) = serde_json::to_value(self) else {
            unreachable!("config serializes to an object")
        };
        let mut out = format!("# msdf {}\n", env!("CARGO_PKG_VERSION"));
        for (k, v) in map {
            let v = match v {
                Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(","),
                other => render(&other),
            };
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Writes the effective configuration (with the tool version) into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_FILE), self.to_text())?;
        Ok(())
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
