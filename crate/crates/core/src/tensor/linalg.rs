use super::dense::{broadcast_shapes, broadcast_strides, for_each_broadcast2};
use super::tape::{BackwardCtx, BackwardOp, Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{dim_err, Result};

struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
    /// Matrix offsets (in elements) into a, b and out for each batch entry.
    batches: Vec<(usize, usize, usize)>,
}

fn plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return Err(dim_err!("matmul needs rank >= 2 operands, got {a:?} and {b:?}"));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(dim_err!("matmul inner dimensions differ: {a:?} @ {b:?}"));
    }
    let (lead_a, lead_b) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let lead = broadcast_shapes(lead_a, lead_b)
        .map_err(|_| dim_err!("matmul batch dimensions do not broadcast: {a:?} @ {b:?}"))?;
    let mut out_shape = lead.clone();
    out_shape.extend([m, n]);
    let mut batches = Vec::new();
    if lead_b.is_empty() {
        // Single GEMM over the flattened leading rows of `a`.
        batches.push((0, 0, 0));
        return Ok(MatmulPlan {
            m: m * lead.iter().product::<usize>(),
            k,
            n,
            out_shape,
            batches,
        });
    }
    let sa = broadcast_strides(lead_a, &lead);
    let sb = broadcast_strides(lead_b, &lead);
    for_each_broadcast2(&lead, &sa, &sb, |o, ia, ib| {
        batches.push((ia * m * k, ib * k * n, o * m * n))
    });
    Ok(MatmulPlan {
        m,
        k,
        n,
        out_shape,
        batches,
    })
}

struct MatmulBackward;

impl<T: Scalar> BackwardOp<T> for MatmulBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        let p = plan(a.shape(), b.shape())?;
        let (k, n) = (p.k as isize, p.n as isize);
        let g = ctx.grad.data();
        let mut ga = ctx.needs[0].then(|| vec![T::zero(); a.len()]);
        let mut gb = ctx.needs[1].then(|| vec![T::zero(); b.len()]);
        for &(oa, ob, oc) in &p.batches {
            // dA = dY @ B^T
            if let Some(ga) = ga.as_mut() {
                T::gemm(
                    p.m,
                    p.n,
                    p.k,
                    T::one(),
                    &g[oc..],
                    (n, 1),
                    &b.data()[ob..],
                    (1, n),
                    T::one(),
                    &mut ga[oa..],
                    (k, 1),
                );
            }
            // dB = A^T @ dY
            if let Some(gb) = gb.as_mut() {
                T::gemm(
                    p.k,
                    p.m,
                    p.n,
                    T::one(),
                    &a.data()[oa..],
                    (1, k),
                    &g[oc..],
                    (n, 1),
                    T::one(),
                    &mut gb[ob..],
                    (n, 1),
                );
            }
        }
        Ok(vec![
            ga.map(|d| Tensor::new(a.shape(), d)).transpose()?,
            gb.map(|d| Tensor::new(b.shape(), d)).transpose()?,
        ])
    }
}

pub fn matmul_values<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let p = plan(a.shape(), b.shape())?;
    let mut out = vec![T::zero(); p.out_shape.iter().product()];
    let (k, n) = (p.k as isize, p.n as isize);
    for &(oa, ob, oc) in &p.batches {
        T::gemm(
            p.m,
            p.k,
            p.n,
            T::one(),
            &a.data()[oa..],
            (k, 1),
            &b.data()[ob..],
            (n, 1),
            T::zero(),
            &mut out[oc..],
            (n, 1),
        );
    }
    Tensor::new(&p.out_shape, out)
}

struct PermuteBackward(Vec<usize>);

impl<T: Scalar> BackwardOp<T> for PermuteBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let mut inverse = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(vec![Some(ctx.grad.permute(&inverse)?)])
    }
}

struct ReshapeBackward;

impl<T: Scalar> BackwardOp<T> for ReshapeBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(ctx.grad.clone().reshape(ctx.inputs[0].shape())?)])
    }
}

impl<T: Scalar> Tape<T> {
    /// Batched matrix product over the last two axes. Leading axes broadcast;
    /// a rank-2 right operand is shared by every leading index of `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul_values(self.value(a), self.value(b))?;
        Ok(self.push(out, vec![a, b], MatmulBackward))
    }

    /// `x @ w + bias` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let out = self.value(x).permute(perm)?;
        Ok(self.push(out, vec![x], PermuteBackward(perm.to_vec())))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(dim_err!("transpose needs rank >= 2, got {:?}", self.shape(x)));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, vec![x], ReshapeBackward))
    }
}
