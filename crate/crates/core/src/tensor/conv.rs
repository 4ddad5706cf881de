use super::tape::{BackwardCtx, BackwardOp, Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone)]
struct Conv3dGeometry {
    batch: usize,
    c_in: usize,
    in_dims: [usize; 3],
    c_out: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    out_dims: [usize; 3],
    batched: bool,
}

impl Conv3dGeometry {
    fn new(x: &[usize], w: &[usize], stride: [usize; 3]) -> Result<Self> {
        let (batched, batch, rest) = match x.len() {
            4 => (false, 1, x),
            5 => (true, x[0], &x[1..]),
            _ => return Err(dim_err!("conv3d input must be [C,T,H,W] or [B,C,T,H,W], got {x:?}")),
        };
        if w.len() != 5 || w[1] != rest[0] {
            return Err(dim_err!("conv3d weight {w:?} does not match input {x:?}"));
        }
        if stride.contains(&0) {
            return Err(Error::Config(format!("conv3d stride {stride:?} has a zero")));
        }
        let in_dims = [rest[1], rest[2], rest[3]];
        let kernel = [w[2], w[3], w[4]];
        let mut out_dims = [0; 3];
        for i in 0..3 {
            if kernel[i] > in_dims[i] {
                return Err(dim_err!("conv3d kernel {kernel:?} exceeds input {in_dims:?}"));
            }
            if kernel[i] == stride[i] && in_dims[i] % stride[i] != 0 {
                return Err(dim_err!(
                    "patchify input {in_dims:?} not divisible by stride {stride:?}"
                ));
            }
            out_dims[i] = (in_dims[i] - kernel[i]) / stride[i] + 1;
        }
        Ok(Self {
            batch,
            c_in: rest[0],
            in_dims,
            c_out: w[0],
            kernel,
            stride,
            out_dims,
            batched,
        })
    }

    fn rows(&self) -> usize {
        self.batch * self.out_dims.iter().product::<usize>()
    }

    fn patch(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    /// Calls `f(row, col, input_offset)` for every im2col entry.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [t_in, h_in, w_in] = self.in_dims;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [to, ho, wo] = self.out_dims;
        let patch = self.patch();
        let mut row = 0;
        for b in 0..self.batch {
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut col = 0;
                        for c in 0..self.c_in {
                            let base = (b * self.c_in + c) * t_in;
                            for dt in 0..kt {
                                for dh in 0..kh {
                                    let off = ((base + ot * st + dt) * h_in + oh * sh + dh) * w_in + ow * sw;
                                    for dw in 0..kw {
                                        f(row, col, off + dw);
                                        col += 1;
                                    }
                                }
                            }
                        }
                        debug_assert_eq!(col, patch);
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let patch = self.patch();
        let mut cols = vec![T::zero(); self.rows() * patch];
        self.for_each_tap(|r, c, off| cols[r * patch + c] = x[off]);
        cols
    }

    fn out_shape(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(5);
        if self.batched {
            s.push(self.batch);
        }
        s.push(self.c_out);
        s.extend(self.out_dims);
        s
    }
}

/// `[B, C_out, T', H', W']` from rows laid out as `[B, T', H', W', C_out]`.
fn rows_to_channel_first<T: Scalar>(rows: Vec<T>, g: &Conv3dGeometry) -> Result<Tensor<T>> {
    let [to, ho, wo] = g.out_dims;
    let t = Tensor::new(&[g.batch, to, ho, wo, g.c_out], rows)?;
    let t = t.permute(&[0, 4, 1, 2, 3])?;
    t.reshape(&g.out_shape())
}

fn channel_first_to_rows<T: Scalar>(t: &Tensor<T>, g: &Conv3dGeometry) -> Result<Vec<T>> {
    let [to, ho, wo] = g.out_dims;
    let t = t.clone().reshape(&[g.batch, g.c_out, to, ho, wo])?;
    Ok(t.permute(&[0, 2, 3, 4, 1])?.into_data())
}

pub fn conv3d_values<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: [usize; 3]) -> Result<Tensor<T>> {
    let g = Conv3dGeometry::new(x.shape(), w.shape(), stride)?;
    let cols = g.im2col(x.data());
    let patch = g.patch() as isize;
    let mut rows = vec![T::zero(); g.rows() * g.c_out];
    // rows = cols @ W^T, W viewed as [C_out, patch]
    T::gemm(
        g.rows(),
        g.patch(),
        g.c_out,
        T::one(),
        &cols,
        (patch, 1),
        w.data(),
        (1, patch),
        T::zero(),
        &mut rows,
        (g.c_out as isize, 1),
    );
    rows_to_channel_first(rows, &g)
}

struct Conv3dBackward {
    stride: [usize; 3],
}

impl<T: Scalar> BackwardOp<T> for Conv3dBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
        let g = Conv3dGeometry::new(x.shape(), w.shape(), self.stride)?;
        let grows = channel_first_to_rows(ctx.grad, &g)?;
        let patch = g.patch();
        let c_out = g.c_out as isize;
        let gx = if ctx.needs[0] {
            let mut dcols = vec![T::zero(); g.rows() * patch];
            T::gemm(
                g.rows(),
                g.c_out,
                patch,
                T::one(),
                &grows,
                (c_out, 1),
                w.data(),
                (patch as isize, 1),
                T::zero(),
                &mut dcols,
                (patch as isize, 1),
            );
            let mut dx = vec![T::zero(); x.len()];
            g.for_each_tap(|r, c, off| dx[off] += dcols[r * patch + c]);
            Some(Tensor::new(x.shape(), dx)?)
        } else {
            None
        };
        let gw = if ctx.needs[1] {
            let cols = g.im2col(x.data());
            let mut dw = vec![T::zero(); w.len()];
            T::gemm(
                g.c_out,
                g.rows(),
                patch,
                T::one(),
                &grows,
                (1, c_out),
                &cols,
                (patch as isize, 1),
                T::zero(),
                &mut dw,
                (patch as isize, 1),
            );
            Some(Tensor::new(w.shape(), dw)?)
        } else {
            None
        };
        Ok(vec![gx, gw])
    }
}

fn check_depthwise(x: &[usize], w: &[usize]) -> Result<(usize, usize, usize)> {
    if x.len() < 2 {
        return Err(dim_err!("conv1d input must be [..., L, D], got {x:?}"));
    }
    let (l, d) = (x[x.len() - 2], x[x.len() - 1]);
    if w.len() != 2 || w[0] != d {
        return Err(dim_err!("depthwise weight {w:?} does not match input {x:?}"));
    }
    if w[1] < 1 {
        return Err(Error::Config("depthwise conv needs at least one tap".into()));
    }
    Ok((l, d, w[1]))
}

/// Causal depthwise convolution: `y[l, d] = sum_j w[d, j] * x[l - j, d]`,
/// zero for `l - j < 0`. Tap 0 is the current position.
pub fn conv1d_depthwise_values<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (l, d, k) = check_depthwise(x.shape(), w.shape())?;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![T::zero(); x.len()];
    for (seq, ys) in out.chunks_mut(l * d).enumerate() {
        let xs = &xd[seq * l * d..(seq + 1) * l * d];
        for t in 0..l {
            for j in 0..k.min(t + 1) {
                let src = &xs[(t - j) * d..(t - j + 1) * d];
                let dst = &mut ys[t * d..(t + 1) * d];
                for c in 0..d {
                    dst[c] += wd[c * k + j] * src[c];
                }
            }
        }
    }
    Tensor::new(x.shape(), out)
}

struct Conv1dBackward;

impl<T: Scalar> BackwardOp<T> for Conv1dBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
        let (l, d, k) = check_depthwise(x.shape(), w.shape())?;
        let (xd, wd, gd) = (x.data(), w.data(), ctx.grad.data());
        let mut gx = vec![T::zero(); x.len()];
        let mut gw = vec![T::zero(); w.len()];
        for seq in 0..x.len() / (l * d) {
            let base = seq * l * d;
            for t in 0..l {
                for j in 0..k.min(t + 1) {
                    for c in 0..d {
                        let g = gd[base + t * d + c];
                        gx[base + (t - j) * d + c] += wd[c * k + j] * g;
                        gw[c * k + j] += xd[base + (t - j) * d + c] * g;
                    }
                }
            }
        }
        Ok(vec![
            ctx.needs[0].then(|| Tensor::new(x.shape(), gx)).transpose()?,
            ctx.needs[1].then(|| Tensor::new(w.shape(), gw)).transpose()?,
        ])
    }
}

impl<T: Scalar> Tape<T> {
    /// Valid 3-D cross-correlation without padding. `x` is `[C,T,H,W]` or
    /// `[B,C,T,H,W]`; `w` is `[C_out, C_in, kT, kH, kW]`.
    pub fn conv3d(&mut self, x: Var, w: Var, stride: [usize; 3]) -> Result<Var> {
        let out = conv3d_values(self.value(x), self.value(w), stride)?;
        Ok(self.push(out, vec![x, w], Conv3dBackward { stride }))
    }

    /// Causal depthwise 1-D convolution over the second-to-last axis of a
    /// channels-last `[..., L, D]` input with a `[D, k]` filter bank.
    pub fn conv1d_depthwise(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = conv1d_depthwise_values(self.value(x), self.value(w))?;
        Ok(self.push(out, vec![x, w], Conv1dBackward))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patchify_shape() {
        let x = Tensor::<f32>::zeros(&[3, 8, 64, 64]);
        let w = Tensor::<f32>::zeros(&[16, 3, 1, 8, 8]);
        let y = conv3d_values(&x, &w, [1, 8, 8]).unwrap();
        assert_eq!(y.shape(), &[16, 8, 8, 8]);
    }

    #[test]
    fn indivisible_patchify_is_rejected() {
        let x = Tensor::<f32>::zeros(&[3, 8, 60, 64]);
        let w = Tensor::<f32>::zeros(&[16, 3, 1, 8, 8]);
        assert!(matches!(conv3d_values(&x, &w, [1, 8, 8]), Err(Error::Dimension(_))));
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::<f64>::ones(&[1, 2, 3, 4]);
        let w = Tensor::<f64>::ones(&[1, 1, 1, 1, 1]);
        assert_eq!(conv3d_values(&x, &w, [1, 1, 1]).unwrap(), x);
    }

    #[test]
    fn causal_conv_hand_case() {
        let x = Tensor::<f64>::from_f64(&[3, 1], &[1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::<f64>::from_f64(&[1, 2], &[1.0, 1.0]).unwrap();
        let y = conv1d_depthwise_values(&x, &w).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn current_tap_filter_is_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 5, 3], |i| i as f64 - 7.0);
        let w = Tensor::<f64>::from_fn(&[3, 4], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(conv1d_depthwise_values(&x, &w).unwrap(), x);
    }
}
