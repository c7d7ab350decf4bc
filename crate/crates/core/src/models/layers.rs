//! Parameter initialisation and the layer building blocks shared by every
//! network in the zoo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{BatchStats, Graph, Var};
use crate::params::{Binding, ParameterSet};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;

/// One forward (and optionally backward) pass: the tape, the parameter
/// leaves, the dropout RNG, and batch-norm statistics awaiting commit.
pub struct Pass {
    pub graph: Graph,
    pub binding: Binding,
    rng: ChaCha8Rng,
    bn_updates: Vec<(String, BatchStats)>,
}

impl Pass {
    pub fn new(params: &ParameterSet, seed: u64) -> Self {
        let mut graph = Graph::new();
        let binding = params.bind(&mut graph);
        Self {
            graph,
            binding,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_updates: Vec::new(),
        }
    }

    pub fn param(&self, name: &str) -> Var {
        self.binding.var(name)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    /// Writes exponential running averages of the recorded batch statistics.
    /// Layers whose affine weights are frozen keep their statistics.
    pub fn commit_bn_updates(&mut self, params: &mut ParameterSet) {
        for (prefix, stats) in self.bn_updates.drain(..) {
            if params.get(&format!("{prefix}.weight")).is_some_and(|p| !p.trainable) {
                continue;
            }
            for (suffix, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
                let running = params
                    .tensor_mut(&format!("{prefix}.{suffix}"))
                    .expect("batch-norm buffers registered at init");
                for (r, b) in running.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
            }
        }
    }

    pub fn linear(&mut self, prefix: &str, x: Var) -> Var {
        let w = self.param(&format!("{prefix}.weight"));
        let b = self.binding.get(&format!("{prefix}.bias"));
        self.graph.linear(x, w, b)
    }

    pub fn conv1d(&mut self, prefix: &str, x: Var) -> Var {
        let w = self.param(&format!("{prefix}.weight"));
        let b = self.param(&format!("{prefix}.bias"));
        self.graph.conv1d(x, w, Some(b))
    }

    pub fn conv_transpose1d(&mut self, prefix: &str, x: Var) -> Var {
        let w = self.param(&format!("{prefix}.weight"));
        let b = self.param(&format!("{prefix}.bias"));
        self.graph.conv_transpose1d(x, w, Some(b))
    }

    /// Batch statistics in training mode (queued for commit), running
    /// statistics otherwise.
    pub fn batch_norm(&mut self, params: &ParameterSet, prefix: &str, x: Var, train: bool) -> Var {
        let gamma = self.param(&format!("{prefix}.weight"));
        let beta = self.param(&format!("{prefix}.bias"));
        if train {
            let (y, stats) = self.graph.batch_norm(x, gamma, beta, None);
            self.bn_updates.push((prefix.to_string(), stats.expect("training mode yields stats")));
            y
        } else {
            let mean = params.tensor(&format!("{prefix}.running_mean")).expect("registered");
            let var = params.tensor(&format!("{prefix}.running_var")).expect("registered");
            self.graph.batch_norm(x, gamma, beta, Some((mean.data(), var.data()))).0
        }
    }

    pub fn dropout(&mut self, x: Var, p: f64, train: bool) -> Var {
        if !train || p == 0.0 {
            return x;
        }
        let n = self.graph.value(x).len();
        let keep: Vec<bool> = (0..n).map(|_| self.rng.random::<f64>() >= p).collect();
        self.graph.dropout(x, &keep, p)
    }
}

/// He-uniform weights (bound `sqrt(6 / fan_in)`), zero bias.
pub fn init_linear(params: &mut ParameterSet, prefix: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) {
    params.insert_weight(format!("{prefix}.weight"), he_uniform(&[d_out, d_in], d_in, rng));
    if bias {
        params.insert_weight(format!("{prefix}.bias"), Tensor::zeros(&[d_out]));
    }
}

pub fn init_conv(params: &mut ParameterSet, prefix: &str, c_in: usize, c_out: usize, kernel: usize, rng: &mut impl Rng) {
    params.insert_weight(format!("{prefix}.weight"), he_uniform(&[c_out, c_in, kernel], c_in * kernel, rng));
    params.insert_weight(format!("{prefix}.bias"), Tensor::zeros(&[c_out]));
}

/// Transposed-convolution weights are stored `[c_in, c_out, kernel]`.
pub fn init_conv_transpose(
    params: &mut ParameterSet,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    rng: &mut impl Rng,
) {
    params.insert_weight(format!("{prefix}.weight"), he_uniform(&[c_in, c_out, kernel], c_in * kernel, rng));
    params.insert_weight(format!("{prefix}.bias"), Tensor::zeros(&[c_out]));
}

/// γ = 1, β = 0, running mean 0, running variance 1.
pub fn init_batch_norm(params: &mut ParameterSet, prefix: &str, channels: usize) {
    params.insert_weight(format!("{prefix}.weight"), Tensor::full(&[channels], 1.0));
    params.insert_weight(format!("{prefix}.bias"), Tensor::zeros(&[channels]));
    params.insert_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]));
    params.insert_buffer(format!("{prefix}.running_var"), Tensor::full(&[channels], 1.0));
}

/// Uniform on `±1/sqrt(fan_in)` for weights and biases, the usual default
/// for recurrent cells and small linear read-outs.
pub fn init_linear_default(params: &mut ParameterSet, prefix: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) {
    let bound = 1.0 / (d_in as f64).sqrt();
    let mut uniform = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect()).unwrap()
    };
    params.insert_weight(format!("{prefix}.weight"), uniform(&[d_out, d_in]));
    if bias {
        params.insert_weight(format!("{prefix}.bias"), uniform(&[d_out]));
    }
}

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect()).unwrap()
}
