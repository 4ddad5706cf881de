use super::network::SpikMamba;
use crate::error::{dim_err, Result};
use crate::tensor::{Scalar, Tape, Tensor};

/// Min-max normalizes each frame of a `[T, ...]` tensor to `[0, 1]`. A
/// constant frame maps to zeros.
pub fn normalize_frames(x: &Tensor<f64>) -> Tensor<f64> {
    let per = x.len() / x.shape()[0];
    let mut out = x.clone();
    for frame in out.data_mut().chunks_mut(per) {
        let lo = frame.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = frame.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for v in frame.iter_mut() {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
    out
}

/// Per-token L2 norm of `[T, N, D]` features, min-max normalized per frame
/// and laid out on the `[T, gh, gw]` token grid.
pub fn token_saliency(local: &Tensor<f64>, grid: (usize, usize)) -> Result<Tensor<f64>> {
    let s = local.shape();
    if s.len() != 3 || s[1] != grid.0 * grid.1 {
        return Err(dim_err!("saliency expects [T, {}, D], got {s:?}", grid.0 * grid.1));
    }
    let d = s[2];
    let norms: Vec<f64> = local
        .data()
        .chunks(d)
        .map(|t| t.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    Ok(normalize_frames(&Tensor::new(&[s[0], grid.0, grid.1], norms)?))
}

/// Nearest-neighbor upsampling of `[T, h, w]` by an integer factor.
pub fn upsample_nearest(x: &Tensor<f64>, factor: usize) -> Tensor<f64> {
    let (t, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h * factor, w * factor);
    Tensor::from_fn(&[t, oh, ow], |i| {
        let (f, r, c) = (i / (oh * ow), (i / ow) % oh, i % ow);
        x.data()[(f * h + r / factor) * w + c / factor]
    })
}

impl<T: Scalar> SpikMamba<T> {
    /// Attention-branch saliency of the final block for one `[3, T, H, W]`
    /// clip: `[T, H/patch, W/patch]` with values in `[0, 1]`.
    pub fn saliency_map(&self, frames: &Tensor<f32>) -> Result<Tensor<f64>> {
        let mut shape = vec![1];
        shape.extend_from_slice(frames.shape());
        let x = frames.clone().reshape(&shape)?;
        let mut tape = Tape::inference();
        let xv = tape.constant(x.cast());
        let out = self.forward_eval(&mut tape, xv)?;
        let local: Tensor<f64> = tape.value(out.local).cast();
        let s = local.shape().to_vec();
        token_saliency(&local.reshape(&s[1..])?, self.config().grid())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Preset};

    #[test]
    fn constant_features_give_zero_map() {
        let x = Tensor::full(&[2, 4, 3], 0.7);
        let m = token_saliency(&x, (2, 2)).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_active_token() {
        let mut x = Tensor::<f64>::zeros(&[1, 4, 3]);
        x.data_mut()[2 * 3 + 1] = -5.0;
        let m = token_saliency(&x, (2, 2)).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn upsampling_repeats_cells() {
        let x = Tensor::from_f64(&[1, 1, 2], &[0.25, 1.0]).unwrap();
        let u = upsample_nearest(&x, 2);
        assert_eq!(u.shape(), &[1, 2, 4]);
        assert_eq!(u.data(), &[0.25, 0.25, 1.0, 1.0, 0.25, 0.25, 1.0, 1.0]);
    }

    #[test]
    fn model_map_is_bounded() {
        let model = SpikMamba::<f32>::new(ModelConfig::preset(Preset::Tiny), 2).unwrap();
        let x = Tensor::from_fn(&[3, 4, 16, 16], |i| ((i * 37) % 11) as f32 / 11.0);
        let m = model.saliency_map(&x).unwrap();
        assert_eq!(m.shape(), &[4, 2, 2]);
        assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
