use super::params::{ParamId, ParamStore};
use super::tape::{BackwardCtx, BackwardOp, Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{dim_err, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch statistics of one training forward.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as folded into running statistics.
    pub var_unbiased: Vec<T>,
}

fn layout(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    if shape.len() < 2 || shape[1] != channels {
        return Err(dim_err!("batch norm expects [B, {channels}, ...], got {shape:?}"));
    }
    Ok((shape[0], shape[2..].iter().product()))
}

fn for_channel<T: Scalar>(
    data: &[T],
    batch: usize,
    channels: usize,
    inner: usize,
    c: usize,
) -> impl Iterator<Item = (usize, T)> + '_ {
    (0..batch).flat_map(move |b| {
        let base = (b * channels + c) * inner;
        (base..base + inner).map(move |i| (i, data[i]))
    })
}

struct BatchNormBackward<T> {
    /// Per-channel `1 / sqrt(var + eps)` actually used for normalization.
    inv_std: Vec<T>,
    mean: Vec<T>,
    batch_stats: bool,
}

impl<T: Scalar> BackwardOp<T> for BatchNormBackward<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, gamma) = (ctx.inputs[0], ctx.inputs[1]);
        let channels = gamma.len();
        let (batch, inner) = layout(x.shape(), channels)?;
        let n = T::from_usize(batch * inner).expect("count");
        let (xd, gd) = (x.data(), ctx.grad.data());
        let mut gx = vec![T::zero(); x.len()];
        let mut ggamma = vec![T::zero(); channels];
        let mut gbeta = vec![T::zero(); channels];
        for c in 0..channels {
            let (mu, is) = (self.mean[c], self.inv_std[c]);
            let g = gamma.data()[c];
            let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
            for (i, v) in for_channel(xd, batch, channels, inner, c) {
                let xhat = (v - mu) * is;
                sum_dy += gd[i];
                sum_dy_xhat += gd[i] * xhat;
            }
            ggamma[c] = sum_dy_xhat;
            gbeta[c] = sum_dy;
            for (i, v) in for_channel(xd, batch, channels, inner, c) {
                gx[i] = if self.batch_stats {
                    let xhat = (v - mu) * is;
                    g * is * (gd[i] - sum_dy / n - xhat * sum_dy_xhat / n)
                } else {
                    g * is * gd[i]
                };
            }
        }
        Ok(vec![
            ctx.needs[0].then(|| Tensor::new(x.shape(), gx)).transpose()?,
            ctx.needs[1].then(|| Tensor::new(gamma.shape(), ggamma)).transpose()?,
            ctx.needs[2].then(|| Tensor::new(gamma.shape(), gbeta)).transpose()?,
        ])
    }
}

impl<T: Scalar> Tape<T> {
    /// Normalizes axis 1 of `x`. With `running = None` batch statistics are
    /// used and returned; otherwise the given `(mean, var)` are applied.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let channels = self.value(gamma).len();
        if self.value(beta).len() != channels {
            return Err(dim_err!("batch norm gamma/beta widths differ"));
        }
        let xv = self.value(x);
        let (batch, inner) = layout(xv.shape(), channels)?;
        let eps = T::from_f64_lossy(BN_EPS);
        let n = batch * inner;
        let nt = T::from_usize(n).expect("count");
        let (mean, var, stats) = match running {
            Some((m, v)) => {
                if m.len() != channels || v.len() != channels {
                    return Err(dim_err!("running statistics width differs from {channels}"));
                }
                (m.to_vec(), v.to_vec(), None)
            }
            None => {
                let mut mean = vec![T::zero(); channels];
                let mut var = vec![T::zero(); channels];
                let mut unbiased = vec![T::zero(); channels];
                for c in 0..channels {
                    let mu = for_channel(xv.data(), batch, channels, inner, c)
                        .map(|(_, v)| v)
                        .sum::<T>()
                        / nt;
                    let ss: T = for_channel(xv.data(), batch, channels, inner, c)
                        .map(|(_, v)| (v - mu) * (v - mu))
                        .sum();
                    mean[c] = mu;
                    var[c] = ss / nt;
                    unbiased[c] = if n > 1 {
                        ss / T::from_usize(n - 1).expect("count")
                    } else {
                        var[c]
                    };
                }
                let stats = BatchStats {
                    mean: mean.clone(),
                    var_unbiased: unbiased,
                };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xv.clone();
        let od = out.data_mut();
        for c in 0..channels {
            for bi in 0..batch {
                let base = (bi * channels + c) * inner;
                for v in &mut od[base..base + inner] {
                    *v = g[c] * (*v - mean[c]) * inv_std[c] + b[c];
                }
            }
        }
        let rule = BatchNormBackward {
            inv_std,
            mean,
            batch_stats: stats.is_some(),
        };
        Ok((self.push(out, vec![x, gamma, beta], rule), stats))
    }
}

/// Batch normalization layer whose running statistics live in a
/// [`ParamStore`] as non-trainable buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(&format!("{prefix}.weight"), Tensor::ones(&[channels]))?,
            beta: store.add(&format!("{prefix}.bias"), Tensor::zeros(&[channels]))?,
            running_mean: store.add_buffer(&format!("{prefix}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.add_buffer(&format!("{prefix}.running_var"), Tensor::ones(&[channels]))?,
        })
    }

    /// Train mode normalizes with batch statistics and folds them into the
    /// running buffers with momentum 0.1; eval mode uses the buffers.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        train: bool,
    ) -> Result<Var> {
        let (y, stats) = self.apply(tape, store, x, train)?;
        if let Some(stats) = stats {
            self.update_running(store, &stats);
        }
        Ok(y)
    }

    /// Like [`BatchNorm::forward`] but leaves the running buffers untouched;
    /// in train mode the batch statistics are returned instead.
    pub fn apply<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        train: bool,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        if train {
            tape.batch_norm(x, gamma, beta, None)
        } else {
            let (m, v) = (store.value(self.running_mean), store.value(self.running_var));
            tape.batch_norm(x, gamma, beta, Some((m.data(), v.data())))
        }
    }

    pub fn update_running<T: Scalar>(&self, store: &mut ParamStore<T>, stats: &BatchStats<T>) {
        let mom = T::from_f64_lossy(BN_MOMENTUM);
        let keep = T::one() - mom;
        for (r, &s) in store
            .value_mut(self.running_mean)
            .data_mut()
            .iter_mut()
            .zip(&stats.mean)
        {
            *r = keep * *r + mom * s;
        }
        for (r, &s) in store
            .value_mut(self.running_var)
            .data_mut()
            .iter_mut()
            .zip(&stats.var_unbiased)
        {
            *r = keep * *r + mom * s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(x: &[f64], shape: &[usize], train: bool) -> (Vec<f64>, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", shape[1]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::from_f64(shape, x).unwrap());
        let y = bn.forward(&mut tape, &mut store, xv, train).unwrap();
        (tape.value(y).data().to_vec(), store)
    }

    #[test]
    fn normalized_input_passes_through() {
        let x = [1.0, -1.0, 1.0, -1.0];
        let (y, _) = run(&x, &[4, 1], true);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_input_maps_to_beta() {
        let (y, _) = run(&[3.0; 6], &[2, 1, 3], true);
        assert!(y.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn two_sample_batch() {
        let (y, store) = run(&[0.0, 2.0], &[2, 1], true);
        let s = (1.0f64 + 1e-5).sqrt();
        assert!((y[0] + 1.0 / s).abs() < 1e-12);
        assert!((y[1] - 1.0 / s).abs() < 1e-12);
        // running stats: 0.9 * init + 0.1 * batch (unbiased var 2)
        let rm = store.value(store.id("bn.running_mean").unwrap()).data()[0];
        let rv = store.value(store.id("bn.running_var").unwrap()).data()[0];
        assert!((rm - 0.1).abs() < 1e-12);
        assert!((rv - 1.1).abs() < 1e-12);
    }

    #[test]
    fn eval_uses_initial_stats() {
        let (y, _) = run(&[0.5, 2.0], &[2, 1], false);
        let s = (1.0f64 + 1e-5).sqrt();
        assert!((y[0] - 0.5 / s).abs() < 1e-12);
        assert!((y[1] - 2.0 / s).abs() < 1e-12);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 3).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(bn.forward(&mut tape, &mut store, x, true).is_err());
    }
}
