use crate::error::{dim_err, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Added to the attention normalizer so dead queries map to zero.
pub const ATTENTION_EPS: f64 = 1e-6;

fn window_shape(shape: &[usize], window: usize) -> Result<Vec<usize>> {
    let r = shape.len();
    if r < 3 {
        return Err(dim_err!("window reshape needs [..., T, N, D], got {shape:?}"));
    }
    let (t, n, d) = (shape[r - 3], shape[r - 2], shape[r - 1]);
    if window == 0 || t % window != 0 {
        return Err(dim_err!("{t} frames are not divisible by window {window}"));
    }
    let mut out = shape[..r - 3].to_vec();
    out.extend([t / window, window * n, d]);
    Ok(out)
}

fn reverse_shape(shape: &[usize], window: usize) -> Result<Vec<usize>> {
    let r = shape.len();
    if r < 3 || window == 0 || !shape[r - 2].is_multiple_of(window) {
        return Err(dim_err!("cannot reverse windows of size {window} from {shape:?}"));
    }
    let mut out = shape[..r - 3].to_vec();
    out.extend([shape[r - 3] * window, shape[r - 2] / window, shape[r - 1]]);
    Ok(out)
}

/// `[..., T, N, D] -> [..., T/w, w*N, D]`: groups `w` consecutive frames
/// into one window of tokens, time-major within the window.
pub fn window_reshape<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let shape = window_shape(x.shape(), window)?;
    x.clone().reshape(&shape)
}

/// Inverse of [`window_reshape`].
pub fn window_reverse<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let shape = reverse_shape(x.shape(), window)?;
    x.clone().reshape(&shape)
}

impl<T: Scalar> Tape<T> {
    pub fn window_reshape(&mut self, x: Var, window: usize) -> Result<Var> {
        let shape = window_shape(self.shape(x), window)?;
        self.reshape(x, &shape)
    }

    pub fn window_reverse(&mut self, x: Var, window: usize) -> Result<Var> {
        let shape = reverse_shape(self.shape(x), window)?;
        self.reshape(x, &shape)
    }

    /// Linear attention over the token axis of `[..., L, D]` inputs:
    ///
    /// ```text
    /// out_i = q_i (sum_j k_j^T v_j) / (q_i . sum_j k_j + eps)
    /// ```
    ///
    /// Cost is `O(L D^2)`; no `L x L` matrix is formed.
    pub fn linear_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (qs, ks, vs) = (self.shape(q), self.shape(k), self.shape(v));
        if qs != ks || qs != vs || qs.len() < 2 {
            return Err(dim_err!(
                "linear attention needs equal [..., L, D] shapes, got {qs:?}, {ks:?}, {vs:?}"
            ));
        }
        let token_axis = qs.len() - 2;
        let kt = self.transpose(k)?;
        let kv = self.matmul(kt, v)?;
        let num = self.matmul(q, kv)?;
        let k_sum = self.sum(k, &[token_axis], true)?;
        let k_sum_t = self.transpose(k_sum)?;
        let den = self.matmul(q, k_sum_t)?;
        let den = self.add_scalar(den, T::from_f64_lossy(ATTENTION_EPS));
        self.div(num, den)
    }
}
