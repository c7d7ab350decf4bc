//! Dense row-major `f64` tensors and the handful of numeric kernels the
//! autograd graph is built on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is `m x k`, `op(b)`
/// is `k x n` and `c` is row-major `m x n`. A transposed operand is stored
/// row-major in its untransposed shape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted slice lengths cover every index the strides reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one `[channels, time]` sample into `[channels * kernel, time]`
/// columns for a stride-1 convolution with symmetric zero padding.
pub(crate) fn im2col(x: &[f64], channels: usize, time: usize, kernel: usize, pad: usize, col: &mut [f64]) {
    for c in 0..channels {
        for k in 0..kernel {
            let row = &mut col[(c * kernel + k) * time..(c * kernel + k + 1) * time];
            let src = &x[c * time..(c + 1) * time];
            for (t, slot) in row.iter_mut().enumerate() {
                let s = t + k;
                *slot = if s >= pad && s - pad < time { src[s - pad] } else { 0.0 };
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the sample.
pub(crate) fn col2im(col: &[f64], channels: usize, time: usize, kernel: usize, pad: usize, x: &mut [f64]) {
    for c in 0..channels {
        for k in 0..kernel {
            let row = &col[(c * kernel + k) * time..(c * kernel + k + 1) * time];
            let dst = &mut x[c * time..(c + 1) * time];
            for (t, &v) in row.iter().enumerate() {
                let s = t + k;
                if s >= pad && s - pad < time {
                    dst[s - pad] += v;
                }
            }
        }
    }
}

/// Stride-1 "same" convolution of a `[batch, c_in, time]` input with weights
/// `[c_out, c_in, kernel]`. Returns `[batch, c_out, time]`, and the im2col
/// buffers when `keep_cols` is set.
pub(crate) fn conv1d_forward(
    x: &[f64],
    batch: usize,
    c_in: usize,
    time: usize,
    w: &[f64],
    c_out: usize,
    kernel: usize,
    keep_cols: bool,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let pad = (kernel - 1) / 2;
    let rows = c_in * kernel;
    let mut out = vec![0.0; batch * c_out * time];
    let mut cols = if keep_cols { vec![0.0; batch * rows * time] } else { Vec::new() };
    let mut scratch = vec![0.0; rows * time];
    for b in 0..batch {
        let col: &mut [f64] = if keep_cols {
            &mut cols[b * rows * time..(b + 1) * rows * time]
        } else {
            &mut scratch
        };
        im2col(&x[b * c_in * time..(b + 1) * c_in * time], c_in, time, kernel, pad, col);
        gemm(
            c_out,
            rows,
            time,
            1.0,
            w,
            false,
            col,
            false,
            0.0,
            &mut out[b * c_out * time..(b + 1) * c_out * time],
        );
    }
    (out, keep_cols.then_some(cols))
}

/// Gradient of [`conv1d_forward`] with respect to its input.
pub(crate) fn conv1d_backward_data(
    dy: &[f64],
    batch: usize,
    c_in: usize,
    time: usize,
    w: &[f64],
    c_out: usize,
    kernel: usize,
) -> Vec<f64> {
    let pad = (kernel - 1) / 2;
    let rows = c_in * kernel;
    let mut dx = vec![0.0; batch * c_in * time];
    let mut dcol = vec![0.0; rows * time];
    for b in 0..batch {
        gemm(
            rows,
            c_out,
            time,
            1.0,
            w,
            true,
            &dy[b * c_out * time..(b + 1) * c_out * time],
            false,
            0.0,
            &mut dcol,
        );
        col2im(&dcol, c_in, time, kernel, pad, &mut dx[b * c_in * time..(b + 1) * c_in * time]);
    }
    dx
}

/// Gradient of [`conv1d_forward`] with respect to its weights, accumulated
/// into `dw` (`[c_out, c_in * kernel]`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward_weight(
    x: &[f64],
    cols: Option<&[f64]>,
    dy: &[f64],
    batch: usize,
    c_in: usize,
    time: usize,
    c_out: usize,
    kernel: usize,
    dw: &mut [f64],
) {
    let pad = (kernel - 1) / 2;
    let rows = c_in * kernel;
    let mut scratch = Vec::new();
    for b in 0..batch {
        let col: &[f64] = match cols {
            Some(c) => &c[b * rows * time..(b + 1) * rows * time],
            None => {
                scratch.resize(rows * time, 0.0);
                im2col(&x[b * c_in * time..(b + 1) * c_in * time], c_in, time, kernel, pad, &mut scratch);
                &scratch
            }
        };
        gemm(
            c_out,
            time,
            rows,
            1.0,
            &dy[b * c_out * time..(b + 1) * c_out * time],
            false,
            col,
            true,
            1.0,
            dw,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product_with_transposes() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0; 4];
        gemm(2, 3, 2, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        // a^T (3x2) * a (2x3) = 3x3
        let mut c = [0.0; 9];
        gemm(3, 2, 3, 1.0, &a, true, &a, false, 0.0, &mut c);
        assert_eq!(c, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
        // a (2x3) * a^T (3x2)
        let mut c = [0.0; 4];
        gemm(2, 3, 2, 1.0, &a, false, &a, true, 0.0, &mut c);
        assert_eq!(c, [14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (c_in, c_out, time, kernel) = (2, 3, 7, 3);
        let x: Vec<f64> = (0..c_in * time).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..c_out * c_in * kernel).map(|i| (i as f64 * 0.11).cos()).collect();
        let (y, _) = conv1d_forward(&x, 1, c_in, time, &w, c_out, kernel, false);
        for co in 0..c_out {
            for t in 0..time {
                let mut s = 0.0;
                for ci in 0..c_in {
                    for k in 0..kernel {
                        let src = t as isize + k as isize - 1;
                        if (0..time as isize).contains(&src) {
                            s += w[(co * c_in + ci) * kernel + k] * x[ci * time + src as usize];
                        }
                    }
                }
                assert!((s - y[co * time + t]).abs() < 1e-12);
            }
        }
    }
}
