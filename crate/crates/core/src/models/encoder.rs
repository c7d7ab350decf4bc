use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{init_batch_norm, init_conv, init_linear, Pass};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::ingest::{Window, CHANNELS};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

pub const ENCODER_PREFIX: &str = "encoder.";

/// Temporal convolutional encoder: stacked conv → batch norm → ReLU →
/// dropout blocks, global mean pooling, and a linear + ReLU adapter when
/// the last block is narrower than `representation_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub dropout: f64,
    pub representation_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: vec![32, 64, 128],
            kernels: vec![9, 5, 5],
            dropout: 0.1,
            representation_dim: 256,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty()
            || self.channels.len() != self.kernels.len()
            || self.kernels.iter().any(|k| k % 2 == 0)
            || self.channels.contains(&0)
            || !(0.0..1.0).contains(&self.dropout)
            || self.representation_dim == 0
        {
            return Err(Error::InvalidConfig(format!("bad encoder config {self:?}")));
        }
        Ok(())
    }

    /// Width of the per-timestep feature map.
    pub fn feature_dim(&self) -> usize {
        *self.channels.last().unwrap()
    }

    pub fn has_adapter(&self) -> bool {
        self.feature_dim() != self.representation_dim
    }
}

pub struct EncoderOutput {
    /// Per-timestep features, channels first: `[batch, feature_dim, time]`.
    pub features: Var,
    /// Pooled representation `[batch, representation_dim]`.
    pub pooled: Var,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    /// Fresh encoder parameters from `seed`.
    pub fn build(cfg: EncoderConfig, seed: u64) -> Result<(Self, ParameterSet)> {
        let enc = Self::new(cfg)?;
        let mut params = ParameterSet::new();
        enc.init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok((enc, params))
    }

    pub fn init_params(&self, params: &mut ParameterSet, rng: &mut ChaCha8Rng) {
        let mut c_in = CHANNELS;
        for (i, (&c_out, &k)) in self.cfg.channels.iter().zip(&self.cfg.kernels).enumerate() {
            init_conv(params, &format!("encoder.conv{i}"), c_in, c_out, k, rng);
            init_batch_norm(params, &format!("encoder.bn{i}"), c_out);
            c_in = c_out;
        }
        if self.cfg.has_adapter() {
            init_linear(params, "encoder.adapter", c_in, self.cfg.representation_dim, true, rng);
        }
    }

    /// `x` is `[batch, 3, time]`. With `train` false, batch norm uses running
    /// statistics and dropout is off.
    pub fn forward(&self, pass: &mut Pass, params: &ParameterSet, x: Var, train: bool) -> Result<EncoderOutput> {
        let shape = pass.graph.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] != CHANNELS || shape[0] == 0 {
            return Err(Error::Shape(format!("encoder expects [batch, 3, time], got {shape:?}")));
        }
        let mut h = x;
        for i in 0..self.cfg.channels.len() {
            h = pass.conv1d(&format!("encoder.conv{i}"), h);
            h = pass.batch_norm(params, &format!("encoder.bn{i}"), h, train);
            h = pass.graph.relu(h);
            h = pass.dropout(h, self.cfg.dropout, train);
        }
        let mut pooled = pass.graph.mean_time(h);
        if self.cfg.has_adapter() {
            pooled = pass.linear("encoder.adapter", pooled);
            pooled = pass.graph.relu(pooled);
        }
        Ok(EncoderOutput { features: h, pooled })
    }
}

/// Stacks windows into a `[batch, 3, time]` tensor.
pub fn windows_to_tensor(windows: &[&Window]) -> Result<Tensor> {
    let Some(first) = windows.first() else {
        return Err(Error::EmptyInput("cannot batch zero windows"));
    };
    let time = first.len();
    let mut data = vec![0.0; windows.len() * CHANNELS * time];
    for (b, w) in windows.iter().enumerate() {
        if w.len() != time {
            return Err(Error::Shape(format!("mixed window lengths {} and {}", time, w.len())));
        }
        let base = b * CHANNELS * time;
        for t in 0..time {
            for c in 0..CHANNELS {
                data[base + c * time + t] = w.at(t, c);
            }
        }
    }
    Tensor::from_vec(&[windows.len(), CHANNELS, time], data)
}
