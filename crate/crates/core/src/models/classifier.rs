use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{init_batch_norm, init_linear, Pass};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::ParameterSet;

pub const CLASSIFIER_PREFIX: &str = "classifier.";

/// MLP head: each hidden layer is linear → batch norm → ReLU → dropout,
/// followed by a linear layer to the class logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128, 128],
            dropout: 0.2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Classifier {
    pub cfg: ClassifierConfig,
    pub input_dim: usize,
    pub n_classes: usize,
}

impl Classifier {
    pub fn new(cfg: ClassifierConfig, input_dim: usize, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::SingleClass(n_classes));
        }
        if !(0.0..1.0).contains(&cfg.dropout) || cfg.hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad classifier config {cfg:?}")));
        }
        Ok(Self {
            cfg,
            input_dim,
            n_classes,
        })
    }

    pub fn init_params(&self, params: &mut ParameterSet, rng: &mut ChaCha8Rng) {
        let mut d_in = self.input_dim;
        for (i, &width) in self.cfg.hidden.iter().enumerate() {
            init_linear(params, &format!("classifier.fc{i}"), d_in, width, true, rng);
            init_batch_norm(params, &format!("classifier.bn{i}"), width);
            d_in = width;
        }
        init_linear(params, "classifier.out", d_in, self.n_classes, true, rng);
    }

    /// `[batch, input_dim]` → `[batch, n_classes]` logits.
    pub fn forward(&self, pass: &mut Pass, params: &ParameterSet, x: Var, train: bool) -> Var {
        let mut h = x;
        for i in 0..self.cfg.hidden.len() {
            h = pass.linear(&format!("classifier.fc{i}"), h);
            h = pass.batch_norm(params, &format!("classifier.bn{i}"), h, train);
            h = pass.graph.relu(h);
            h = pass.dropout(h, self.cfg.dropout, train);
        }
        pass.linear("classifier.out", h)
    }
}
