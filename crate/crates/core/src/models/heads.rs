//! Pretext-specific heads that sit on top of the shared encoder.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{init_batch_norm, init_conv_transpose, init_linear, init_linear_default, Pass};
use crate::autograd::Var;
use crate::ingest::CHANNELS;
use crate::params::ParameterSet;
use crate::tensor::Tensor;

/// One logit per transform kind from the pooled representation.
#[derive(Clone, Debug)]
pub struct MultitaskHead {
    pub input_dim: usize,
    pub n_tasks: usize,
}

impl MultitaskHead {
    pub fn init_params(&self, params: &mut ParameterSet, rng: &mut ChaCha8Rng) {
        init_linear(params, "head.multitask", self.input_dim, self.n_tasks, true, rng);
    }

    pub fn forward(&self, pass: &mut Pass, pooled: Var) -> Var {
        pass.linear("head.multitask", pooled)
    }
}

/// SimCLR projection: linear → ReLU → linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub hidden: usize,
    pub output: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { hidden: 128, output: 64 }
    }
}

#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub input_dim: usize,
    pub cfg: ProjectionConfig,
}

impl ProjectionHead {
    pub fn init_params(&self, params: &mut ParameterSet, rng: &mut ChaCha8Rng) {
        init_linear(params, "head.proj0", self.input_dim, self.cfg.hidden, true, rng);
        init_linear(params, "head.proj1", self.cfg.hidden, self.cfg.output, true, rng);
    }

    pub fn forward(&self, pass: &mut Pass, pooled: Var) -> Var {
        let h = pass.linear("head.proj0", pooled);
        let h = pass.graph.relu(h);
        pass.linear("head.proj1", h)
    }
}

/// Transposed-convolution decoder mirroring the encoder's channel ladder.
/// Every layer but the last is followed by batch norm and ReLU.
#[derive(Clone, Debug)]
pub struct Decoder {
    /// `(c_in, c_out, kernel)` per layer.
    pub layers: Vec<(usize, usize, usize)>,
}

impl Decoder {
    /// Reverses `channels`/`kernels` of an encoder and ends at the 3 input axes.
    pub fn mirror(channels: &[usize], kernels: &[usize]) -> Self {
        let mut ladder: Vec<usize> = channels.iter().rev().copied().collect();
        ladder.push(CHANNELS);
        let layers = ladder
            .windows(2)
            .zip(kernels.iter().rev())
            .map(|(pair, &k)| (pair[0], pair[1], k))
            .collect();
        Self { layers }
    }

    pub fn init_params(&self, params: &mut ParameterSet, rng: &mut ChaCha8Rng) {
        let last = self.layers.len() - 1;
        for (i, &(c_in, c_out, k)) in self.layers.iter().enumerate() {
            init_conv_transpose(params, &format!("head.deconv{i}"), c_in, c_out, k, rng);
            if i < last {
                init_batch_norm(params, &format!("head.debn{i}"), c_out);
            }
        }
    }

    /// `[batch, feature_dim, time]` → `[batch, 3, time]`.
    pub fn forward(&self, pass: &mut Pass, params: &ParameterSet, features: Var, train: bool) -> Var {
        let last = self.layers.len() - 1;
        let mut h = features;
        for i in 0..self.layers.len() {
            h = pass.conv_transpose1d(&format!("head.deconv{i}"), h);
            if i < last {
                h = pass.batch_norm(params, &format!("head.debn{i}"), h, train);
                h = pass.graph.relu(h);
            }
        }
        h
    }
}

/// Causal GRU context network with one bias-free linear predictor per
/// future step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextAggregatorConfig {
    pub hidden: usize,
    pub horizon: usize,
}

impl Default for ContextAggregatorConfig {
    fn default() -> Self {
        Self { hidden: 128, horizon: 4 }
    }
}

#[derive(Clone, Debug)]
pub struct CpcHead {
    pub feature_dim: usize,
    pub cfg: ContextAggregatorConfig,
}

impl CpcHead {
    pub fn init_params(&self, params: &mut ParameterSet, rng: &mut ChaCha8Rng) {
        let h = self.cfg.hidden;
        // gates stacked as [reset; update; candidate]
        init_linear_default(params, "head.gru.input", self.feature_dim, 3 * h, true, rng);
        init_linear_default(params, "head.gru.hidden", h, 3 * h, true, rng);
        // zero predictors: every logit starts equal, so the loss starts at ln B
        for step in 1..=self.cfg.horizon {
            params.insert_weight(format!("head.predict{step}.weight"), Tensor::zeros(&[self.feature_dim, h]));
        }
    }

    /// Runs the GRU over `features [batch, time, feature_dim]` for timesteps
    /// `0..=upto` and returns the hidden state after each one.
    pub fn context(&self, pass: &mut Pass, features: Var, upto: usize) -> Vec<Var> {
        let batch = pass.graph.value(features).shape()[0];
        let h_dim = self.cfg.hidden;
        let mut h = pass.input(Tensor::zeros(&[batch, h_dim]));
        let mut states = Vec::with_capacity(upto + 1);
        for t in 0..=upto {
            let x_t = pass.graph.select_mid(features, t);
            let gi = pass.linear("head.gru.input", x_t);
            let gh = pass.linear("head.gru.hidden", h);
            let (ir, iz, in_) = (
                pass.graph.slice_cols(gi, 0, h_dim),
                pass.graph.slice_cols(gi, h_dim, h_dim),
                pass.graph.slice_cols(gi, 2 * h_dim, h_dim),
            );
            let (hr, hz, hn) = (
                pass.graph.slice_cols(gh, 0, h_dim),
                pass.graph.slice_cols(gh, h_dim, h_dim),
                pass.graph.slice_cols(gh, 2 * h_dim, h_dim),
            );
            let r = pass.graph.add(ir, hr);
            let r = pass.graph.sigmoid(r);
            let z = pass.graph.add(iz, hz);
            let z = pass.graph.sigmoid(z);
            let rn = pass.graph.mul(r, hn);
            let n = pass.graph.add(in_, rn);
            let n = pass.graph.tanh(n);
            // h' = n + z * (h - n)
            let d = pass.graph.sub(h, n);
            let zd = pass.graph.mul(z, d);
            h = pass.graph.add(n, zd);
            states.push(h);
        }
        states
    }

    /// Prediction of the features `step` timesteps after `context`.
    pub fn predict(&self, pass: &mut Pass, context: Var, step: usize) -> Var {
        pass.linear(&format!("head.predict{step}"), context)
    }
}
