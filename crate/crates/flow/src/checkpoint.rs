//! Model checkpoints: diffkit parameter records (weights, then `ema/` shadows)
//! followed by a JSON trailer holding the configuration.

use std::path::Path;

use diffkit::checkpoint::{read_records, split_params, write_records, EMA_PREFIX};
use diffkit::ParamStore;
use msdf_core::msdf::{row_width, ChannelStats};
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::model::{ModelConfig, VelocityModel};
use crate::train::TrainConfig;

/// Mechanism choices of this implementation, recorded so a checkpoint states
/// how its model conditions on time and class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityFlags {
    pub time_as_token: bool,
    pub condition_as_token: bool,
    pub learned_null_condition: bool,
    pub positional_encoding: bool,
    pub canonical_row_order: bool,
    pub time_gated_skip: bool,
}

impl Default for ParityFlags {
    fn default() -> Self {
        Self {
            time_as_token: true,
            condition_as_token: true,
            learned_null_condition: true,
            positional_encoding: false,
            canonical_row_order: true,
            time_gated_skip: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub tool_version: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Rows per shape.
    pub n: usize,
    pub k: usize,
    pub class_names: Vec<String>,
    /// Channel statistics as `[p_mean(3), p_max, s_mean, s_max]`.
    pub stats: Option<[f32; 6]>,
    pub parity: ParityFlags,
}

impl CheckpointMeta {
    pub fn new(model: ModelConfig, train: TrainConfig, n: usize, k: usize) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            model,
            train,
            n,
            k,
            class_names: Vec::new(),
            stats: None,
            parity: ParityFlags::default(),
        }
    }

    pub fn channel_stats(&self) -> Result<Option<ChannelStats>> {
        self.stats
            .map(|a| ChannelStats::from_array(a).map_err(FlowError::from))
            .transpose()
    }

    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if row_width(self.k) != self.model.d {
            return Err(FlowError::Checkpoint(format!(
                "k = {} does not match row width {}",
                self.k, self.model.d
            )));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.model.classes {
            return Err(FlowError::Checkpoint(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.model.classes
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
    pub ema: Option<ParamStore>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.meta.validate()?;
        let ema_names: Vec<String> = self
            .ema
            .iter()
            .flat_map(|e| e.iter().map(|(n, _)| format!("{EMA_PREFIX}{n}")))
            .collect();
        let mut records: Vec<_> = self.params.iter().collect();
        if let Some(e) = &self.ema {
            records.extend(ema_names.iter().map(String::as_str).zip(e.iter().map(|(_, t)| t)));
        }
        let mut out = Vec::new();
        write_records(&mut out, records)?;
        serde_json::to_writer(&mut out, &self.meta).map_err(|e| FlowError::Checkpoint(e.to_string()))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rest = bytes;
        let records = read_records(&mut rest)?;
        let meta: CheckpointMeta =
            serde_json::from_slice(rest).map_err(|e| FlowError::Checkpoint(format!("config trailer: {e}")))?;
        meta.validate()?;
        let (params, ema) = split_params(records);
        let ema = (!ema.is_empty()).then_some(ema);
        let ck = Self { meta, params, ema };
        // Shape and name check.
        ck.model(false)?;
        if ck.ema.is_some() {
            ck.model(true)?;
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// The model with raw or EMA weights (raw when no EMA was stored).
    pub fn model(&self, use_ema: bool) -> Result<VelocityModel> {
        let params = match (&self.ema, use_ema) {
            (Some(e), true) => e.clone(),
            _ => self.params.clone(),
        };
        VelocityModel::from_params(self.meta.model, params)
    }
}
