//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation eagerly; [`Graph::backward`] walks the
//! tape in reverse. Nodes that do not depend on any trainable leaf are never
//! differentiated, so a frozen encoder costs one forward pass only.

use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const BN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var, trans_b: bool },
    Conv1d { x: Var, w: Var, b: Option<Var>, cols: Option<Vec<f64>> },
    ConvTranspose1d { x: Var, w: Var, b: Option<Var> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MeanTime(Var),
    SwapLast(Var),
    Reshape(Var),
    SelectMid { x: Var, index: usize },
    SliceCols { x: Var, start: usize },
    L2Normalize { x: Var, norms: Vec<f64> },
    MaskDiagonal(Var),
    SoftmaxCe { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    BceLogits { logits: Var, targets: Vec<f64> },
    Mse(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm, used by layers
/// to update their running estimates.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; absent for nodes outside the trainable cone.
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }
}

fn shape3(t: &Tensor) -> (usize, usize, usize) {
    match *t.shape() {
        [a, b] => (a, b, 1),
        [a, b, c] => (a, b, c),
        ref s => panic!("expected a rank-2 or rank-3 tensor, got {:?}", s),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input or parameter. Only leaves with `requires_grad` receive
    /// gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `x [n, in] * w[out, in]^T + b` → `[n, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, d_in) = (xv.shape()[0], xv.shape()[1]);
        let d_out = wv.shape()[0];
        assert_eq!(wv.shape()[1], d_in, "linear: input width mismatch");
        let mut out = vec![0.0; n * d_out];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_mut(d_out) {
                row.copy_from_slice(bv);
            }
        }
        tensor::gemm(n, d_in, d_out, 1.0, xv.data(), false, wv.data(), true, 1.0, &mut out);
        let value = Tensor::from_vec(&[n, d_out], out).unwrap();
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(value, Op::Linear { x, w, b }, &parents)
    }

    /// `a [n, k] * b` where `b` is `[k, m]`, or `[m, k]` when `trans_b`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k) = (av.shape()[0], av.shape()[1]);
        let m = if trans_b { bv.shape()[0] } else { bv.shape()[1] };
        let kb = if trans_b { bv.shape()[1] } else { bv.shape()[0] };
        assert_eq!(k, kb, "matmul: inner dimension mismatch");
        let mut out = vec![0.0; n * m];
        tensor::gemm(n, k, m, 1.0, av.data(), false, bv.data(), trans_b, 0.0, &mut out);
        let value = Tensor::from_vec(&[n, m], out).unwrap();
        self.push(value, Op::MatMul { a, b, trans_b }, &[a, b])
    }

    /// Stride-1 "same" convolution; `x [b, c_in, t]`, `w [c_out, c_in, k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (batch, c_in, time) = shape3(xv);
        let (c_out, wc_in, kernel) = shape3(wv);
        assert_eq!(c_in, wc_in, "conv1d: channel mismatch");
        assert!(kernel % 2 == 1, "conv1d: same padding needs an odd kernel");
        let keep_cols = self.requires_grad(w);
        let (mut out, cols) = tensor::conv1d_forward(xv.data(), batch, c_in, time, wv.data(), c_out, kernel, keep_cols);
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), batch, c_out, time);
        }
        let value = Tensor::from_vec(&[batch, c_out, time], out).unwrap();
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(value, Op::Conv1d { x, w, b, cols }, &parents)
    }

    /// Stride-1 transposed convolution; `x [b, c_in, t]`, `w [c_in, c_out, k]`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (batch, c_in, time) = shape3(xv);
        let (wc_in, c_out, kernel) = shape3(wv);
        assert_eq!(c_in, wc_in, "conv_transpose1d: channel mismatch");
        assert!(kernel % 2 == 1, "conv_transpose1d: same padding needs an odd kernel");
        // The transposed convolution is the input-gradient of a convolution
        // whose weights are `w` read as [c_in (conv out), c_out (conv in), k].
        let mut out = tensor::conv1d_backward_data(xv.data(), batch, c_out, time, wv.data(), c_in, kernel);
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), batch, c_out, time);
        }
        let value = Tensor::from_vec(&[batch, c_out, time], out).unwrap();
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(value, Op::ConvTranspose1d { x, w, b }, &parents)
    }

    /// Batch normalisation over axis 1 of a `[n, c]` or `[n, c, t]` input.
    /// In training mode returns the batch statistics; otherwise normalises
    /// with the supplied running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
    ) -> (Var, Option<BatchStats>) {
        let xv = self.value(x);
        let (outer, channels, inner) = shape3(xv);
        let count = outer * inner;
        let data = xv.data();
        let (mean, var_biased) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for o in 0..outer {
                    for c in 0..channels {
                        let base = (o * channels + c) * inner;
                        mean[c] += data[base..base + inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for o in 0..outer {
                    for c in 0..channels {
                        let base = (o * channels + c) * inner;
                        var[c] += data[base..base + inner].iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for o in 0..outer {
            for c in 0..channels {
                let base = (o * channels + c) * inner;
                for i in base..base + inner {
                    xhat[i] = (data[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + b[c];
                }
            }
        }
        let train = running.is_none();
        let stats = train.then(|| BatchStats {
            var: var_biased
                .iter()
                .map(|v| if count > 1 { v * count as f64 / (count - 1) as f64 } else { *v })
                .collect(),
            mean,
        });
        let value = Tensor::from_vec(xv.shape(), out).unwrap();
        let var = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        );
        (var, stats)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x), &[x])
    }

    /// Inverted dropout with a pre-drawn keep mask of 0/1 entries.
    pub fn dropout(&mut self, x: Var, keep: &[bool], p: f64) -> Var {
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
        let xv = self.value(x);
        assert_eq!(mask.len(), xv.len());
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::from_vec(xv.shape(), data).unwrap();
        self.push(value, Op::Dropout { x, mask }, &[x])
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.shape(), data).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, |x, y| x + y);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, |x, y| x - y);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, |x, y| x * y);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale(x, s), &[x])
    }

    /// `[b, c, t]` → `[b, c]` by averaging over time.
    pub fn mean_time(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (b, c, t) = shape3(xv);
        let data = xv.data().chunks(t).map(|row| row.iter().sum::<f64>() / t as f64).collect();
        let value = Tensor::from_vec(&[b, c], data).unwrap();
        self.push(value, Op::MeanTime(x), &[x])
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn swap_last(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (b, m, n) = shape3(xv);
        let value = Tensor::from_vec(&[b, n, m], swap_last_data(xv.data(), b, m, n)).unwrap();
        self.push(value, Op::SwapLast(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshape(shape).expect("reshape");
        self.push(value, Op::Reshape(x), &[x])
    }

    /// `[b, t, d]` → `[b, d]` at time `index`.
    pub fn select_mid(&mut self, x: Var, index: usize) -> Var {
        let xv = self.value(x);
        let (b, t, d) = shape3(xv);
        assert!(index < t);
        let mut data = Vec::with_capacity(b * d);
        for i in 0..b {
            let base = (i * t + index) * d;
            data.extend_from_slice(&xv.data()[base..base + d]);
        }
        let value = Tensor::from_vec(&[b, d], data).unwrap();
        self.push(value, Op::SelectMid { x, index }, &[x])
    }

    /// Columns `start..start + len` of an `[n, d]` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        assert!(start + len <= d);
        let mut data = Vec::with_capacity(n * len);
        for row in xv.data().chunks(d) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let value = Tensor::from_vec(&[n, len], data).unwrap();
        self.push(value, Op::SliceCols { x, start }, &[x])
    }

    /// Scales each row of `[n, d]` to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = xv.shape()[1];
        let norms: Vec<f64> = xv
            .data()
            .chunks(d)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12))
            .collect();
        let data = xv
            .data()
            .chunks(d)
            .zip(&norms)
            .flat_map(|(r, n)| r.iter().map(move |v| v / n))
            .collect();
        let value = Tensor::from_vec(xv.shape(), data).unwrap();
        self.push(value, Op::L2Normalize { x, norms }, &[x])
    }

    /// Sets the diagonal of a square matrix to negative infinity.
    pub fn mask_diagonal(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let n = value.shape()[0];
        for i in 0..n {
            value.data_mut()[i * n + i] = f64::NEG_INFINITY;
        }
        self.push(value, Op::MaskDiagonal(x), &[x])
    }

    /// Mean softmax cross-entropy of `[n, c]` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        let (n, c) = (lv.shape()[0], lv.shape()[1]);
        assert_eq!(n, targets.len());
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for (i, row) in lv.data().chunks(c).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[targets[i]];
        }
        let value = Tensor::scalar(loss / n as f64);
        self.push(
            value,
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Mean binary cross-entropy of logits against 0/1 targets, computed in
    /// the numerically stable `max(z,0) - z*y + ln(1 + e^-|z|)` form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), targets.len());
        let total: f64 = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let value = Tensor::scalar(total / targets.len() as f64);
        self.push(
            value,
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        )
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let diff = self.binary(a, b, |x, y| x - y);
        let value = Tensor::scalar(diff.data().iter().map(|d| d * d).sum::<f64>() / diff.len() as f64);
        self.push(value, Op::Mse(a, b), &[a, b])
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Gradients(grads)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, g: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        let dyd = dy.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, d_in) = (xv.shape()[0], xv.shape()[1]);
                let d_out = wv.shape()[0];
                if self.wants(*x) {
                    let mut dx = vec![0.0; n * d_in];
                    tensor::gemm(n, d_out, d_in, 1.0, dyd, false, wv.data(), false, 0.0, &mut dx);
                    acc(*x, Tensor::from_vec(xv.shape(), dx).unwrap());
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; d_out * d_in];
                    tensor::gemm(d_out, n, d_in, 1.0, dyd, true, xv.data(), false, 0.0, &mut dw);
                    acc(*w, Tensor::from_vec(wv.shape(), dw).unwrap());
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut db = vec![0.0; d_out];
                    for row in dyd.chunks(d_out) {
                        db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    acc(b, Tensor::from_vec(&[d_out], db).unwrap());
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = (av.shape()[0], av.shape()[1]);
                let m = dy.shape()[1];
                if self.wants(*a) {
                    // da = dy * op(b)^T
                    let mut da = vec![0.0; n * k];
                    tensor::gemm(n, m, k, 1.0, dyd, false, bv.data(), !trans_b, 0.0, &mut da);
                    acc(*a, Tensor::from_vec(av.shape(), da).unwrap());
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * m];
                    if *trans_b {
                        // db [m, k] = dy^T a
                        tensor::gemm(m, n, k, 1.0, dyd, true, av.data(), false, 0.0, &mut db);
                    } else {
                        tensor::gemm(k, n, m, 1.0, av.data(), true, dyd, false, 0.0, &mut db);
                    }
                    acc(*b, Tensor::from_vec(bv.shape(), db).unwrap());
                }
            }
            Op::Conv1d { x, w, b, cols } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, c_in, time) = shape3(xv);
                let (c_out, _, kernel) = shape3(wv);
                if self.wants(*x) {
                    let dx = tensor::conv1d_backward_data(dyd, batch, c_in, time, wv.data(), c_out, kernel);
                    acc(*x, Tensor::from_vec(xv.shape(), dx).unwrap());
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; wv.len()];
                    tensor::conv1d_backward_weight(
                        xv.data(),
                        cols.as_deref(),
                        dyd,
                        batch,
                        c_in,
                        time,
                        c_out,
                        kernel,
                        &mut dw,
                    );
                    acc(*w, Tensor::from_vec(wv.shape(), dw).unwrap());
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    acc(b, channel_bias_grad(dyd, batch, c_out, time));
                }
            }
            Op::ConvTranspose1d { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, c_in, time) = shape3(xv);
                let (_, c_out, kernel) = shape3(wv);
                if self.wants(*x) {
                    let (dx, _) = tensor::conv1d_forward(dyd, batch, c_out, time, wv.data(), c_in, kernel, false);
                    acc(*x, Tensor::from_vec(xv.shape(), dx).unwrap());
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; wv.len()];
                    tensor::conv1d_backward_weight(dyd, None, xv.data(), batch, c_out, time, c_in, kernel, &mut dw);
                    acc(*w, Tensor::from_vec(wv.shape(), dw).unwrap());
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    acc(b, channel_bias_grad(dyd, batch, c_out, time));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xv = self.value(*x);
                let (outer, channels, inner) = shape3(xv);
                let count = (outer * inner) as f64;
                let g = self.value(*gamma).data();
                let mut sum_dy = vec![0.0; channels];
                let mut sum_dy_xhat = vec![0.0; channels];
                for o in 0..outer {
                    for c in 0..channels {
                        let base = (o * channels + c) * inner;
                        for i in base..base + inner {
                            sum_dy[c] += dyd[i];
                            sum_dy_xhat[c] += dyd[i] * xhat[i];
                        }
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; xv.len()];
                    for o in 0..outer {
                        for c in 0..channels {
                            let base = (o * channels + c) * inner;
                            let k = g[c] * inv_std[c];
                            for i in base..base + inner {
                                dx[i] = if *train {
                                    k / count * (count * dyd[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c])
                                } else {
                                    k * dyd[i]
                                };
                            }
                        }
                    }
                    acc(*x, Tensor::from_vec(xv.shape(), dx).unwrap());
                }
                if self.wants(*gamma) {
                    acc(*gamma, Tensor::from_vec(&[channels], sum_dy_xhat).unwrap());
                }
                if self.wants(*beta) {
                    acc(*beta, Tensor::from_vec(&[channels], sum_dy).unwrap());
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = xv.data().iter().zip(dyd).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
                acc(*x, Tensor::from_vec(xv.shape(), d).unwrap());
            }
            Op::Sigmoid(x) => {
                let d = node.value.data().iter().zip(dyd).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                acc(*x, Tensor::from_vec(dy.shape(), d).unwrap());
            }
            Op::Tanh(x) => {
                let d = node.value.data().iter().zip(dyd).map(|(&t, &g)| g * (1.0 - t * t)).collect();
                acc(*x, Tensor::from_vec(dy.shape(), d).unwrap());
            }
            Op::Dropout { x, mask } => {
                let d = dyd.iter().zip(mask).map(|(g, m)| g * m).collect();
                acc(*x, Tensor::from_vec(dy.shape(), d).unwrap());
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, dy.clone());
                }
                if self.wants(*b) {
                    acc(*b, dy.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(*a, dy.clone());
                }
                if self.wants(*b) {
                    acc(*b, dy.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = dyd.iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                    acc(*a, Tensor::from_vec(dy.shape(), d).unwrap());
                }
                if self.wants(*b) {
                    let d = dyd.iter().zip(av.data()).map(|(g, x)| g * x).collect();
                    acc(*b, Tensor::from_vec(dy.shape(), d).unwrap());
                }
            }
            Op::Scale(x, s) => acc(*x, dy.map(|v| v * s)),
            Op::MeanTime(x) => {
                let xv = self.value(*x);
                let (_, _, t) = shape3(xv);
                let d = dyd.iter().flat_map(|&g| std::iter::repeat_n(g / t as f64, t)).collect();
                acc(*x, Tensor::from_vec(xv.shape(), d).unwrap());
            }
            Op::SwapLast(x) => {
                let (b, n, m) = shape3(dy);
                acc(*x, Tensor::from_vec(&[b, m, n], swap_last_data(dyd, b, n, m)).unwrap());
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(*x, dy.clone().reshape(&shape).unwrap());
            }
            Op::SelectMid { x, index } => {
                let xv = self.value(*x);
                let (b, t, d) = shape3(xv);
                let mut dx = vec![0.0; xv.len()];
                for i in 0..b {
                    let base = (i * t + index) * d;
                    dx[base..base + d].copy_from_slice(&dyd[i * d..(i + 1) * d]);
                }
                acc(*x, Tensor::from_vec(xv.shape(), dx).unwrap());
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let d = xv.shape()[1];
                let len = dy.shape()[1];
                let mut dx = vec![0.0; xv.len()];
                for (row, g) in dx.chunks_mut(d).zip(dyd.chunks(len)) {
                    row[*start..start + len].copy_from_slice(g);
                }
                acc(*x, Tensor::from_vec(xv.shape(), dx).unwrap());
            }
            Op::L2Normalize { x, norms } => {
                let d = dy.shape()[1];
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for (i, n) in norms.iter().enumerate() {
                    let r = i * d..(i + 1) * d;
                    let dot: f64 = y[r.clone()].iter().zip(&dyd[r.clone()]).map(|(a, b)| a * b).sum();
                    for j in r {
                        dx[j] = (dyd[j] - y[j] * dot) / n;
                    }
                }
                acc(*x, Tensor::from_vec(dy.shape(), dx).unwrap());
            }
            Op::MaskDiagonal(x) => {
                let mut d = dy.clone();
                let n = d.shape()[0];
                for i in 0..n {
                    d.data_mut()[i * n + i] = 0.0;
                }
                acc(*x, d);
            }
            Op::SoftmaxCe { logits, targets, probs } => {
                let lv = self.value(*logits);
                let (n, c) = (lv.shape()[0], lv.shape()[1]);
                let scale = dyd[0] / n as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &t) in targets.iter().enumerate() {
                    d[i * c + t] -= scale;
                }
                acc(*logits, Tensor::from_vec(lv.shape(), d).unwrap());
            }
            Op::BceLogits { logits, targets } => {
                let lv = self.value(*logits);
                let scale = dyd[0] / targets.len() as f64;
                let d = lv.data().iter().zip(targets).map(|(&z, &y)| (sigmoid(z) - y) * scale).collect();
                acc(*logits, Tensor::from_vec(lv.shape(), d).unwrap());
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let scale = 2.0 * dyd[0] / av.len() as f64;
                let diff: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * scale).collect();
                if self.wants(*b) {
                    acc(*b, Tensor::from_vec(av.shape(), diff.iter().map(|v| -v).collect()).unwrap());
                }
                if self.wants(*a) {
                    acc(*a, Tensor::from_vec(av.shape(), diff).unwrap());
                }
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], batch: usize, channels: usize, time: usize) {
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * time;
            out[base..base + time].iter_mut().for_each(|v| *v += bias[c]);
        }
    }
}

fn channel_bias_grad(dy: &[f64], batch: usize, channels: usize, time: usize) -> Tensor {
    let mut db = vec![0.0; channels];
    for b in 0..batch {
        for (c, slot) in db.iter_mut().enumerate() {
            let base = (b * channels + c) * time;
            *slot += dy[base..base + time].iter().sum::<f64>();
        }
    }
    Tensor::from_vec(&[channels], db).unwrap()
}

fn swap_last_data(x: &[f64], b: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..b {
        let src = &x[i * m * n..(i + 1) * m * n];
        let dst = &mut out[i * m * n..(i + 1) * m * n];
        for r in 0..m {
            for c in 0..n {
                dst[c * m + r] = src[r * n + c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference check of d(loss)/d(input) for a graph builder that
    /// receives the input leaf.
    fn check(input: Tensor, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let x = g.leaf(input.clone(), true);
        let loss = build(&mut g, x);
        let grads = g.backward(loss);
        let analytic = grads.get(x).unwrap().clone();
        let eps = 1e-5;
        for i in 0..input.len() {
            let eval = |delta: f64| {
                let mut t = input.clone();
                t.data_mut()[i] += delta;
                let mut g = Graph::new();
                let x = g.leaf(t, true);
                let l = build(&mut g, x);
                g.value(l).item()
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (a - numeric).abs() / denom < 1e-5,
                "element {i}: analytic {a} numeric {numeric}"
            );
        }
    }

    #[test]
    fn conv_and_transpose_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random(&[3, 2, 3], &mut rng);
        let wt = random(&[3, 2, 5], &mut rng);
        let target = random(&[2, 2, 6], &mut rng);
        check(random(&[2, 2, 6], &mut rng), |g, x| {
            let w = g.constant(w.clone());
            let wt = g.constant(wt.clone());
            let t = g.constant(target.clone());
            let h = g.conv1d(x, w, None);
            let y = g.conv_transpose1d(h, wt, None);
            g.mse(y, t)
        });
        // gradient w.r.t. the weights
        let x = random(&[2, 2, 6], &mut rng);
        check(w.clone(), |g, w| {
            let x = g.constant(x.clone());
            let wt = g.constant(wt.clone());
            let t = g.constant(target.clone());
            let h = g.conv1d(x, w, None);
            let y = g.conv_transpose1d(h, wt, None);
            g.mse(y, t)
        });
        check(wt.clone(), |g, wt| {
            let x = g.constant(x.clone());
            let w = g.constant(w.clone());
            let t = g.constant(target.clone());
            let h = g.conv1d(x, w, None);
            let y = g.conv_transpose1d(h, wt, None);
            g.mse(y, t)
        });
    }

    #[test]
    fn batch_norm_train_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random(&[4, 3, 2], &mut rng);
        check(random(&[4, 3, 2], &mut rng), |g, x| {
            let gamma = g.constant(Tensor::from_vec(&[3], vec![1.2, 0.7, -0.4]).unwrap());
            let beta = g.constant(Tensor::from_vec(&[3], vec![0.1, 0.0, 0.3]).unwrap());
            let (y, _) = g.batch_norm(x, gamma, beta, None);
            let w = g.constant(w.clone());
            let p = g.mul(y, w);
            let t = g.constant(Tensor::zeros(&[4, 3, 2]));
            let s = g.tanh(p);
            g.mse(s, t)
        });
    }

    #[test]
    fn sequence_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(&[6, 4], &mut rng);
        check(random(&[2, 4, 3], &mut rng), |g, x| {
            let xt = g.swap_last(x); // [2, 3, 4]
            let s = g.select_mid(xt, 1); // [2, 4]
            let w = g.constant(w.clone());
            let h = g.linear(s, w, None); // [2, 6]
            let a = g.slice_cols(h, 0, 3);
            let b = g.slice_cols(h, 3, 3);
            let sa = g.sigmoid(a);
            let m = g.mul(sa, b);
            let m = g.l2_normalize(m);
            let sim = g.matmul(m, m, true);
            let sim = g.mask_diagonal(sim);
            g.softmax_cross_entropy(sim, &[1, 0])
        });
    }

    #[test]
    fn bce_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check(random(&[3, 2], &mut rng), |g, x| {
            let r = g.reshape(x, &[3, 1, 2]);
            let p = g.mean_time(r);
            g.bce_with_logits(p, &[1.0, 0.0, 1.0])
        });
    }
}
