use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` samples.
pub(crate) fn fan_in_uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.sample(dist)))
}

/// Affine map over the last axis; the weight is stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.add(&format!("{prefix}.weight"), fan_in_uniform(rng, &[d_in, d_out], d_in))?;
        let bias = if bias {
            Some(store.add(&format!("{prefix}.bias"), fan_in_uniform(rng, &[d_out], d_in))?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        std::iter::once(self.weight).chain(self.bias)
    }
}

/// Parameter count of a [`Linear`].
pub fn linear_params(d_in: usize, d_out: usize, bias: bool) -> usize {
    d_in * d_out + if bias { d_out } else { 0 }
}
