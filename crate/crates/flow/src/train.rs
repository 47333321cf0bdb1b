//! Flow-matching training loop.

use std::time::Instant;

use diffkit::{AdamConfig, AdamState, ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FlowError, Result};
use crate::model::{canonical_order, gather, VelocityModel};
use crate::path::CondOtPath;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Linear learning-rate warm-up.
    pub warmup_steps: usize,
    pub p_uncond: f64,
    pub sigma: f64,
    pub ema_decay: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            lr: 1e-4,
            warmup_steps: 0,
            p_uncond: 0.1,
            sigma: 1e-5,
            ema_decay: 0.999,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(invalid(format!("p_uncond must lie in [0, 1], got {}", self.p_uncond)));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.ema_decay) {
            return Err(invalid("lr must be positive and ema_decay in [0, 1)"));
        }
        CondOtPath::new(self.sigma)?;
        Ok(())
    }
}

/// One training example: a normalized `n × d` matrix and its class.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub x: Vec<f32>,
    pub class: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// EMA shadow of the weights after the last step.
    pub ema: ParamStore,
    pub seconds: f64,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    /// Mean of the last `window` losses.
    pub fn tail_loss(&self, window: usize) -> f64 {
        let w = window.clamp(1, self.losses.len().max(1));
        let tail = &self.losses[self.losses.len().saturating_sub(w)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Mean squared error of one minibatch and its parameter gradients.
pub fn batch_loss(
    model: &VelocityModel,
    batch: &[(Vec<f32>, Vec<f32>, f32, usize)],
) -> Result<(f64, Vec<diffkit::Tensor>)> {
    let d = model.config().d;
    let mut tape = Tape::new();
    let w = model.record_params(&mut tape);
    let mut total = None;
    for (xt, target, t, row) in batch {
        let n = xt.len() / d;
        let order = canonical_order(xt, d);
        let xs = gather(xt, d, &order);
        let ts = gather(target, d, &order);
        let out = model.record_forward(&mut tape, &w, &xs, *t, *row)?;
        let tgt = tape.leaf(diffkit::Tensor::new(&[n, d], ts)?);
        let diff = tape.sub(out, tgt)?;
        let sq = tape.mul(diff, diff)?;
        let l = tape.mean(sq);
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let total = total.ok_or_else(|| invalid("empty batch"))?;
    let loss = tape.scale(total, 1.0 / batch.len() as f32);
    let grads = tape.backward(loss)?;
    let value = tape.value(loss).item() as f64;
    Ok((value, grads.param_grads(&model.params().shapes())))
}

fn check_dataset(model: &VelocityModel, data: &[Example]) -> Result<()> {
    let first = data.first().ok_or_else(|| invalid("empty training set"))?;
    let len = first.x.len();
    for (i, e) in data.iter().enumerate() {
        if e.x.len() != len {
            return Err(invalid(format!("example {i} has {} entries, expected {len}", e.x.len())));
        }
        model.check_input(&e.x)?;
        model.condition_row(e.class)?;
    }
    Ok(())
}

/// Trains `model` in place. Each step draws, per batch item, an example,
/// `t ~ U[0, 1]`, a condition nulled with probability `p_uncond` and Gaussian
/// noise, then takes one Adam step on the regression loss.
pub fn train(model: &mut VelocityModel, data: &[Example], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    check_dataset(model, data)?;
    let path = CondOtPath::new(config.sigma)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let adam_cfg = AdamConfig {
        lr: config.lr,
        ema_decay: config.ema_decay,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, model.params());
    let len = data[0].x.len();
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let ex = &data[rng.random_range(0..data.len())];
            let t: f64 = rng.random();
            let class = if rng.random::<f64>() < config.p_uncond { None } else { ex.class };
            let x0: Vec<f32> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (xt, target) = path.sample(&x0, &ex.x, t)?;
            batch.push((xt, target, t as f32, model.condition_row(class)?));
        }
        let (loss, grads) = batch_loss(model, &batch)?;
        if !loss.is_finite() {
            return Err(FlowError::NonFiniteLoss { step });
        }
        let lr = if step < config.warmup_steps {
            config.lr * (step + 1) as f32 / config.warmup_steps as f32
        } else {
            config.lr
        };
        adam.step_with_lr(model.params_mut(), &grads, lr)?;
        losses.push(loss);
        if step % 100 == 0 {
            log::debug!("flow step {step}: loss {loss:.6}");
        }
    }
    let mut ema = model.params().clone();
    for (i, t) in adam.ema().iter().enumerate() {
        *ema.get_mut(i) = t.clone();
    }
    Ok(TrainReport {
        losses,
        ema,
        seconds: start.elapsed().as_secs_f64(),
    })
}
