use super::dense::{broadcast_strides, for_each_broadcast2};
use super::tape::{BackwardCtx, BackwardOp, Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{dim_err, Error, Result};

/// Sums `x` over `axes`, keeping reduced axes as length 1.
fn sum_keepdim<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let kept: Vec<usize> = x
        .shape()
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect();
    let st = broadcast_strides(&kept, x.shape());
    let zero = vec![0; x.rank()];
    let mut out = vec![T::zero(); kept.iter().product()];
    let d = x.data();
    for_each_broadcast2(x.shape(), &st, &zero, |o, t, _| out[t] += d[o]);
    Tensor::new(&kept, out).expect("reduced shape")
}

fn expand<T: Scalar>(g: &Tensor<T>, shape: &[usize], scale: T) -> Tensor<T> {
    let st = broadcast_strides(g.shape(), shape);
    let zero = vec![0; shape.len()];
    let gd = g.data();
    let mut out = vec![T::zero(); shape.iter().product()];
    for_each_broadcast2(shape, &st, &zero, |o, i, _| out[o] = gd[i] * scale);
    Tensor::new(shape, out).expect("expanded shape")
}

struct ReduceBackward<T> {
    kept: Vec<usize>,
    scale: T,
}

impl<T: Scalar> BackwardOp<T> for ReduceBackward<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = ctx.grad.clone().reshape(&self.kept)?;
        Ok(vec![Some(expand(&g, ctx.inputs[0].shape(), self.scale))])
    }
}

impl<T: Scalar> Tape<T> {
    fn reduce(&mut self, x: Var, axes: &[usize], keepdim: bool, mean: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axes.is_empty() {
            return Err(Error::Domain("reduction over an empty axis list".into()));
        }
        if let Some(&a) = axes.iter().find(|&&a| a >= shape.len()) {
            return Err(dim_err!("axis {a} out of range for shape {shape:?}"));
        }
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        let mut out = sum_keepdim(self.value(x), axes);
        let kept = out.shape().to_vec();
        let scale = if mean {
            T::one() / T::from_usize(count).expect("count")
        } else {
            T::one()
        };
        if mean {
            out.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        if !keepdim {
            let squeezed: Vec<usize> = shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect();
            out = out.reshape(&squeezed)?;
        }
        Ok(self.push(out, vec![x], ReduceBackward { kept, scale }))
    }

    pub fn sum(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce(x, axes, keepdim, false)
    }

    pub fn mean(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce(x, axes, keepdim, true)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        if axes.is_empty() {
            return x;
        }
        self.reduce(x, &axes, false, false).expect("full reduction")
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        if axes.is_empty() {
            return x;
        }
        self.reduce(x, &axes, false, true).expect("full reduction")
    }
}
