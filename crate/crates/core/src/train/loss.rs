use crate::error::{dim_err, Error, Result};
use crate::tensor::{BackwardCtx, BackwardOp, Scalar, Tape, Tensor, Var};

fn check_labels(shape: &[usize], labels: &[usize]) -> Result<(usize, usize)> {
    let [b, c]: [usize; 2] = shape
        .try_into()
        .map_err(|_| dim_err!("cross entropy expects [B, C] logits, got {shape:?}"))?;
    if labels.len() != b {
        return Err(dim_err!("{} labels for a batch of {b}", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Validation(format!("label {bad} out of range for {c} classes")));
    }
    Ok((b, c))
}

/// Row-wise softmax with max subtraction.
fn softmax_rows<T: Scalar>(data: &[T], c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(c) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&z| (z - m).exp()));
        let s: T = out[start..].iter().copied().fold(T::zero(), |a, b| a + b);
        out[start..].iter_mut().for_each(|p| *p /= s);
    }
    out
}

/// Mean negative log-likelihood of `labels` under softmax of `logits`.
pub fn cross_entropy_values<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let (b, c) = check_labels(logits.shape(), labels)?;
    let mut total = T::zero();
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&z| (z - m).exp()).fold(T::zero(), |a, b| a + b).ln() + m;
        total += lse - row[y];
    }
    Ok(total / T::from_usize(b).expect("batch size"))
}

struct CrossEntropyBackward {
    labels: Vec<usize>,
}

impl<T: Scalar> BackwardOp<T> for CrossEntropyBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let logits = ctx.inputs[0];
        let c = logits.shape()[1];
        let scale = ctx.grad.item()? / T::from_usize(self.labels.len()).expect("batch size");
        let mut g = softmax_rows(logits.data(), c);
        for (row, &y) in g.chunks_mut(c).zip(&self.labels) {
            row[y] -= T::one();
            row.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(vec![Some(Tensor::new(logits.shape(), g)?)])
    }
}

impl<T: Scalar> Tape<T> {
    /// Scalar mean cross-entropy of `[B, C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let loss = cross_entropy_values(self.value(logits), labels)?;
        let rule = CrossEntropyBackward {
            labels: labels.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), vec![logits], rule))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamStore;

    #[test]
    fn uniform_logits_give_log_classes() {
        let z = Tensor::<f64>::zeros(&[3, 4]);
        let l = cross_entropy_values(&z, &[0, 1, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert!((l - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn huge_margin_gives_zero_loss() {
        let z = Tensor::<f64>::from_f64(&[1, 3], &[1e4, 0.0, -1e4]).unwrap();
        assert!(cross_entropy_values(&z, &[0]).unwrap().abs() < 1e-300);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let z = Tensor::<f32>::zeros(&[1, 2]);
        assert!(matches!(cross_entropy_values(&z, &[2]), Err(Error::Validation(_))));
    }

    #[test]
    fn gradient_is_softmax_minus_onehot_over_batch() {
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(Tensor::zeros(&[2, 2]), true);
        let loss = tape.cross_entropy(z, &[0, 1]).unwrap();
        let g = tape.backward(loss, &mut ParamStore::new()).unwrap();
        assert_eq!(g.get(z).unwrap().data(), &[-0.25, 0.25, 0.25, -0.25]);
    }
}
