//! First-order optimisers over a [`ParameterSet`]. Non-trainable entries are
//! skipped entirely, so frozen arrays stay bit-identical.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autograd::Gradients;
use crate::params::{Binding, ParamKind, ParameterSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Adam with L2 weight decay folded into the gradient.
    Adam,
    /// Plain SGD: no momentum, no schedule.
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            weight_decay: 0.0,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub struct Optimizer {
    cfg: OptimizerConfig,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    /// Applies one update using the gradients of the bound leaves.
    pub fn step(&mut self, params: &mut ParameterSet, binding: &Binding, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let (lr, wd) = (self.cfg.learning_rate, self.cfg.weight_decay);
        for (name, p) in params.iter_mut() {
            if p.kind != ParamKind::Weight || !p.trainable {
                continue;
            }
            let Some(g) = grads.get(binding.var(name)) else { continue };
            let values = p.value.data_mut();
            match self.cfg.kind {
                OptimizerKind::Sgd => {
                    for (w, &gi) in values.iter_mut().zip(g.data()) {
                        *w -= lr * (gi + wd * *w);
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = self
                        .moments
                        .entry(name.clone())
                        .or_insert_with(|| (vec![0.0; values.len()], vec![0.0; values.len()]));
                    let bc1 = 1.0 - BETA1.powi(t);
                    let bc2 = 1.0 - BETA2.powi(t);
                    for i in 0..values.len() {
                        let gi = g.data()[i] + wd * values[i];
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        values[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::tensor::Tensor;

    fn quadratic_run(kind: OptimizerKind, frozen: bool) -> (f64, f64) {
        let mut params = ParameterSet::new();
        params.insert_weight("w", Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap());
        if frozen {
            params.set_freeze(&["w"]).unwrap();
        }
        let mut opt = Optimizer::new(OptimizerConfig {
            kind,
            learning_rate: 0.1,
            weight_decay: 0.0,
        });
        for _ in 0..200 {
            let mut g = Graph::new();
            let b = params.bind(&mut g);
            let zero = g.constant(Tensor::zeros(&[2]));
            let loss = g.mse(b.var("w"), zero);
            let grads = g.backward(loss);
            opt.step(&mut params, &b, &grads);
        }
        let w = params.tensor("w").unwrap().data();
        (w[0], w[1])
    }

    #[test]
    fn both_optimizers_minimise_a_quadratic() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let (a, b) = quadratic_run(kind, false);
            assert!(a.abs() < 1e-2 && b.abs() < 1e-2, "{kind:?}: {a} {b}");
        }
    }

    #[test]
    fn frozen_parameters_never_move() {
        assert_eq!(quadratic_run(OptimizerKind::Adam, true), (3.0, -2.0));
    }
}
