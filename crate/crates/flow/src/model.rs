//! Permutation-equivariant velocity field `U(X, t, c)`.
//!
//! Each row of `X` is a token. Time and condition enter as two extra tokens;
//! no positional encoding is used. The output for the data tokens is a
//! pre-norm transformer readout plus a time-gated per-channel skip `X ⊙ g(t)`.
//!
//! Rows are put in lexicographic order before the forward pass and the output
//! is permuted back, so every reduction sees its operands in the same order
//! for any row permutation of the input: equivariance then holds bit for bit.

use std::cmp::Ordering;

use diffkit::{NodeId, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FlowError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Row width `d = 4 + k³`.
    pub d: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// Real classes; the null condition is an extra embedding row.
    pub classes: usize,
    pub mlp_ratio: usize,
}

impl ModelConfig {
    pub fn new(d: usize, classes: usize) -> Self {
        Self {
            d,
            hidden: 64,
            layers: 2,
            heads: 4,
            classes,
            mlp_ratio: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.hidden == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return Err(invalid(format!("degenerate model config {self:?}")));
        }
        if self.hidden % 2 != 0 || self.hidden % self.heads != 0 {
            return Err(invalid(format!(
                "hidden width {} must be even and divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    qkv_w: usize,
    qkv_b: usize,
    proj_w: usize,
    proj_b: usize,
    mlp1_w: usize,
    mlp1_b: usize,
    mlp2_w: usize,
    mlp2_b: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    in_w: usize,
    in_b: usize,
    time_w: usize,
    time_b: usize,
    gate_w: usize,
    gate_b: usize,
    table: usize,
    blocks: Vec<Block>,
    out_w: usize,
    out_b: usize,
}

#[derive(Clone, Debug)]
pub struct VelocityModel {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

/// Uniform in `±1/√fan_in`.
fn init_tensor(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, gain: f32) -> Tensor {
    let a = gain / (fan_in as f32).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-a..a))
}

/// Sinusoidal features of `t`: `sin` then `cos` of `1000 t ω_i` with
/// geometric frequencies `ω_i = 10000^(-i / half)`.
pub fn time_features(t: f32, width: usize) -> Vec<f32> {
    let half = width / 2;
    let mut out = vec![0f32; width];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = 1000.0 * t as f64 * freq;
        out[i] = arg.sin() as f32;
        out[half + i] = arg.cos() as f32;
    }
    out
}

/// Stable lexicographic row order (total order on `f32`).
pub fn canonical_order(x: &[f32], d: usize) -> Vec<usize> {
    let n = x.len() / d;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&x[a * d..(a + 1) * d], &x[b * d..(b + 1) * d]);
        ra.iter()
            .zip(rb)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    order
}

pub(crate) fn gather(x: &[f32], d: usize, order: &[usize]) -> Vec<f32> {
    order.iter().flat_map(|&i| x[i * d..(i + 1) * d].iter().copied()).collect()
}

pub(crate) fn scatter(y: &[f32], d: usize, order: &[usize]) -> Vec<f32> {
    let mut out = vec![0f32; y.len()];
    for (pos, &i) in order.iter().enumerate() {
        out[i * d..(i + 1) * d].copy_from_slice(&y[pos * d..(pos + 1) * d]);
    }
    out
}

impl VelocityModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (config.d, config.hidden);
        let m = h * config.mlp_ratio;
        let mut p = ParamStore::new();
        let mut add = |p: &mut ParamStore, name: String, shape: &[usize], fan_in: usize, gain: f32| {
            let t = if gain == 0.0 {
                Tensor::zeros(shape)
            } else {
                init_tensor(&mut rng, shape, fan_in, gain)
            };
            p.add(name, t)
        };
        let in_w = add(&mut p, "in/w".into(), &[d, h], d, 1.0);
        let in_b = add(&mut p, "in/b".into(), &[h], d, 0.0);
        let time_w = add(&mut p, "time/w".into(), &[h, h], h, 1.0);
        let time_b = add(&mut p, "time/b".into(), &[h], h, 0.0);
        let gate_w = add(&mut p, "gate/w".into(), &[h, d], h, 0.0);
        let gate_b = add(&mut p, "gate/b".into(), &[d], h, 0.0);
        let table = add(&mut p, "cond/table".into(), &[config.classes + 1, h], 1, 1.0);
        let blocks = (0..config.layers)
            .map(|l| Block {
                qkv_w: add(&mut p, format!("blocks/{l}/qkv/w"), &[h, 3 * h], h, 1.0),
                qkv_b: add(&mut p, format!("blocks/{l}/qkv/b"), &[3 * h], h, 0.0),
                proj_w: add(&mut p, format!("blocks/{l}/proj/w"), &[h, h], h, 1.0),
                proj_b: add(&mut p, format!("blocks/{l}/proj/b"), &[h], h, 0.0),
                mlp1_w: add(&mut p, format!("blocks/{l}/mlp1/w"), &[h, m], h, 1.0),
                mlp1_b: add(&mut p, format!("blocks/{l}/mlp1/b"), &[m], h, 0.0),
                mlp2_w: add(&mut p, format!("blocks/{l}/mlp2/w"), &[m, h], m, 1.0),
                mlp2_b: add(&mut p, format!("blocks/{l}/mlp2/b"), &[h], m, 0.0),
            })
            .collect();
        let out_w = add(&mut p, "out/w".into(), &[h, d], h, 0.1);
        let out_b = add(&mut p, "out/b".into(), &[d], h, 0.0);
        let layout = Layout {
            in_w,
            in_b,
            time_w,
            time_b,
            gate_w,
            gate_b,
            table,
            blocks,
            out_w,
            out_b,
        };
        Ok(Self { config, params: p, layout })
    }

    /// A model with the given weights; names and shapes must match the config.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(FlowError::Checkpoint(format!(
                "{} parameters, expected {}",
                params.len(),
                model.params.len()
            )));
        }
        for i in 0..model.params.len() {
            let name = model.params.name(i).to_string();
            let src = params
                .index_of(&name)
                .ok_or_else(|| FlowError::Checkpoint(format!("missing parameter {name}")))?;
            let t = params.get(src);
            if t.shape() != model.params.get(i).shape() {
                return Err(FlowError::Checkpoint(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    model.params.get(i).shape()
                )));
            }
            *model.params.get_mut(i) = t.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.total_len()
    }

    /// Embedding row for a condition; `None` is the null condition.
    pub fn condition_row(&self, class: Option<usize>) -> Result<usize> {
        match class {
            None => Ok(self.config.classes),
            Some(id) if id < self.config.classes => Ok(id),
            Some(id) => Err(FlowError::UnknownClass {
                id,
                classes: self.config.classes,
            }),
        }
    }

    pub(crate) fn check_input(&self, x: &[f32]) -> Result<usize> {
        let d = self.config.d;
        if x.is_empty() || x.len() % d != 0 {
            return Err(invalid(format!("input of {} entries is not n × {d}", x.len())));
        }
        Ok(x.len() / d)
    }

    /// Records every parameter on `tape`; returns nodes indexed like the store.
    pub(crate) fn record_params(&self, tape: &mut Tape) -> Vec<NodeId> {
        (0..self.params.len()).map(|i| tape.param(i, self.params.get(i).clone())).collect()
    }

    /// Forward pass for rows already in canonical order. Returns the `n × d` output node.
    pub(crate) fn record_forward(
        &self,
        tape: &mut Tape,
        w: &[NodeId],
        x: &[f32],
        t: f32,
        cond_row: usize,
    ) -> Result<NodeId> {
        let c = &self.config;
        let l = &self.layout;
        let (d, h) = (c.d, c.hidden);
        let n = x.len() / d;
        let linear = |tape: &mut Tape, x: NodeId, wi: usize, bi: usize| -> Result<NodeId> {
            let y = tape.matmul(x, w[wi])?;
            Ok(tape.add(y, w[bi])?)
        };

        let xin = tape.leaf(Tensor::new(&[n, d], x.to_vec())?);
        let tokens = linear(tape, xin, l.in_w, l.in_b)?;
        let tf = tape.leaf(Tensor::new(&[1, h], time_features(t, h))?);
        let temb = linear(tape, tf, l.time_w, l.time_b)?;
        let temb = tape.gelu(temb);
        let cond = tape.gather_rows(w[l.table], &[cond_row])?;
        let mut z = tape.concat(&[tokens, temb, cond], 0)?;

        let heads = c.heads;
        let hd = h / heads;
        let scale = 1.0 / (hd as f32).sqrt();
        for b in &l.blocks {
            let zn = tape.layer_norm(z)?;
            let qkv = linear(tape, zn, b.qkv_w, b.qkv_b)?;
            let mut outs = Vec::with_capacity(heads);
            for head in 0..heads {
                let q = tape.slice(qkv, 1, head * hd, hd)?;
                let k = tape.slice(qkv, 1, h + head * hd, hd)?;
                let v = tape.slice(qkv, 1, 2 * h + head * hd, hd)?;
                let s = tape.matmul_nt(q, k)?;
                let s = tape.scale(s, scale);
                let a = tape.softmax(s)?;
                outs.push(tape.matmul(a, v)?);
            }
            let att = tape.concat(&outs, 1)?;
            let att = linear(tape, att, b.proj_w, b.proj_b)?;
            z = tape.add(z, att)?;
            let zn = tape.layer_norm(z)?;
            let m = linear(tape, zn, b.mlp1_w, b.mlp1_b)?;
            let m = tape.gelu(m);
            let m = linear(tape, m, b.mlp2_w, b.mlp2_b)?;
            z = tape.add(z, m)?;
        }

        let data = tape.slice(z, 0, 0, n)?;
        let data = tape.layer_norm(data)?;
        let out = linear(tape, data, l.out_w, l.out_b)?;
        let gate = linear(tape, temb, l.gate_w, l.gate_b)?;
        let gate = tape.reshape(gate, &[d])?;
        let skip = tape.mul(xin, gate)?;
        Ok(tape.add(out, skip)?)
    }

    /// `U(X, t, c)` for an `n × d` row-major matrix.
    pub fn velocity(&self, x: &[f32], t: f32, class: Option<usize>) -> Result<Vec<f32>> {
        self.check_input(x)?;
        let row = self.condition_row(class)?;
        let d = self.config.d;
        let order = canonical_order(x, d);
        let xs = gather(x, d, &order);
        let mut tape = Tape::new();
        let w = self.record_params(&mut tape);
        let out = self.record_forward(&mut tape, &w, &xs, t, row)?;
        Ok(scatter(tape.value(out).data(), d, &order))
    }
}
