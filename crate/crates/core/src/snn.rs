//! Leaky integrate-and-fire neurons:
//!
//! ```text
//! H[t] = V[t-1] + (X[t] - (V[t-1] - V_reset)) / tau
//! S[t] = step(H[t] - V_th)
//! V[t] = H[t] (1 - S[t]) + V_reset S[t]
//! ```
//!
//! The step has no useful derivative, so the backward pass substitutes a
//! surrogate `dS/dH` and treats `S` inside the reset term as a constant.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{BackwardCtx, BackwardOp, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Surrogate {
    /// `dS/dH = 1/width` inside `|H - V_th| < width / 2`, zero outside.
    Rectangular { width: f64 },
    /// `dS/dH = (alpha / 2) / (1 + (pi/2 * alpha * (H - V_th))^2)`.
    Arctan { alpha: f64 },
}

impl Default for Surrogate {
    fn default() -> Self {
        Surrogate::Rectangular { width: 1.0 }
    }
}

impl Surrogate {
    pub fn derivative<T: Scalar>(&self, d: T) -> T {
        match *self {
            Surrogate::Rectangular { width } => {
                let w = T::from_f64_lossy(width);
                if d.abs() < w / T::from_f64_lossy(2.0) {
                    T::one() / w
                } else {
                    T::zero()
                }
            }
            Surrogate::Arctan { alpha } => {
                let a = T::from_f64_lossy(alpha);
                let z = T::from_f64_lossy(std::f64::consts::FRAC_PI_2) * a * d;
                a / T::from_f64_lossy(2.0) / (T::one() + z * z)
            }
        }
    }

    /// Smooth stand-in for the step whose derivative is [`Self::derivative`].
    pub fn relaxed<T: Scalar>(&self, d: T) -> T {
        let half = T::from_f64_lossy(0.5);
        match *self {
            Surrogate::Rectangular { width } => (d / T::from_f64_lossy(width) + half).max(T::zero()).min(T::one()),
            Surrogate::Arctan { alpha } => {
                let z = T::from_f64_lossy(std::f64::consts::FRAC_PI_2 * alpha) * d;
                z.atan() / T::from_f64_lossy(std::f64::consts::PI) + half
            }
        }
    }

    /// Index of the smooth piece of the relaxed forward containing `d`
    /// (the hard reset contributes a kink at zero).
    fn region<T: Scalar>(&self, d: T) -> u8 {
        let above = (d >= T::zero()) as u8;
        match *self {
            Surrogate::Rectangular { width } => {
                let half = T::from_f64_lossy(width / 2.0);
                if d <= -half {
                    0
                } else if d >= half {
                    3
                } else {
                    1 + above
                }
            }
            Surrogate::Arctan { .. } => above,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifConfig {
    pub tau: f64,
    pub v_th: f64,
    pub v_reset: f64,
    pub surrogate: Surrogate,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            v_th: 1.0,
            v_reset: 0.0,
            surrogate: Surrogate::default(),
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::Config(format!("lif tau must exceed 1, got {}", self.tau)));
        }
        if !(self.v_th > self.v_reset) {
            return Err(Error::Config(format!(
                "lif v_th ({}) must exceed v_reset ({})",
                self.v_th, self.v_reset
            )));
        }
        match self.surrogate {
            Surrogate::Rectangular { width } if !(width > 0.0) => {
                Err(Error::Config(format!("surrogate width must be positive, got {width}")))
            }
            Surrogate::Arctan { alpha } if !(alpha > 0.0) => {
                Err(Error::Config(format!("surrogate alpha must be positive, got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    fn consts<T: Scalar>(&self) -> (T, T, T) {
        (
            T::one() / T::from_f64_lossy(self.tau),
            T::from_f64_lossy(self.v_th),
            T::from_f64_lossy(self.v_reset),
        )
    }
}

/// Membrane potentials carried between time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState<T> {
    pub v: Tensor<T>,
}

impl<T: Scalar> LifState<T> {
    pub fn at_reset(shape: &[usize], cfg: &LifConfig) -> Self {
        Self {
            v: Tensor::full(shape, T::from_f64_lossy(cfg.v_reset)),
        }
    }
}

/// Charge, fire and reset, returning `(H, S, V_new)` for one neuron.
#[inline]
fn step<T: Scalar>(x: T, v_prev: T, inv_tau: T, v_th: T, v_reset: T) -> (T, T, T) {
    let h = v_prev + inv_tau * (x - (v_prev - v_reset));
    let s = if h - v_th >= T::zero() { T::one() } else { T::zero() };
    let v = h * (T::one() - s) + v_reset * s;
    (h, s, v)
}

/// One time step for a whole layer.
pub fn lif_step<T: Scalar>(x_t: &Tensor<T>, state: &LifState<T>, cfg: &LifConfig) -> Result<(Tensor<T>, LifState<T>)> {
    if x_t.shape() != state.v.shape() {
        return Err(dim_err!(
            "lif input {:?} does not match state {:?}",
            x_t.shape(),
            state.v.shape()
        ));
    }
    let (inv_tau, v_th, v_reset) = cfg.consts::<T>();
    let mut spikes = Vec::with_capacity(x_t.len());
    let mut v_new = Vec::with_capacity(x_t.len());
    for (&x, &v) in x_t.data().iter().zip(state.v.data()) {
        let (_, s, v) = step(x, v, inv_tau, v_th, v_reset);
        spikes.push(s);
        v_new.push(v);
    }
    Ok((
        Tensor::new(x_t.shape(), spikes)?,
        LifState {
            v: Tensor::new(x_t.shape(), v_new)?,
        },
    ))
}

/// Runs [`lif_step`] along the leading (time) axis from a reset state.
pub fn lif_sequence<T: Scalar>(x: &Tensor<T>, cfg: &LifConfig) -> Result<Tensor<T>> {
    if x.rank() == 0 {
        return Err(Error::Contract("lif sequence needs a leading time axis".into()));
    }
    let steps = x.shape()[0];
    let frame: Vec<usize> = x.shape()[1..].to_vec();
    let width = x.len() / steps;
    let mut state = LifState::at_reset(&frame, cfg);
    let mut out = Vec::with_capacity(x.len());
    for t in 0..steps {
        let x_t = Tensor::new(&frame, x.data()[t * width..(t + 1) * width].to_vec())?;
        let (s, next) = lif_step(&x_t, &state, cfg)?;
        out.extend_from_slice(s.data());
        state = next;
    }
    Tensor::new(x.shape(), out)
}

/// Upstream gradient times the surrogate derivative at `H - V_th`.
pub fn heaviside_surrogate_backward<T: Scalar>(
    h_minus_vth: &Tensor<T>,
    upstream: &Tensor<T>,
    cfg: &LifConfig,
) -> Result<Tensor<T>> {
    if h_minus_vth.shape() != upstream.shape() {
        return Err(dim_err!(
            "surrogate shapes differ: {:?} vs {:?}",
            h_minus_vth.shape(),
            upstream.shape()
        ));
    }
    Ok(h_minus_vth.zip_map(upstream, |d, g| g * cfg.surrogate.derivative(d)))
}

#[derive(Debug, Clone, Copy)]
struct TimeLayout {
    outer: usize,
    steps: usize,
    inner: usize,
}

impl TimeLayout {
    fn new(shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return Err(dim_err!("time axis {axis} out of range for {shape:?}"));
        }
        Ok(Self {
            outer: shape[..axis].iter().product(),
            steps: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }

    #[inline]
    fn index(&self, o: usize, t: usize, i: usize) -> usize {
        (o * self.steps + t) * self.inner + i
    }
}

struct LifBackward<T> {
    cfg: LifConfig,
    layout: TimeLayout,
    /// `H - V_th` per element.
    h_minus_th: Vec<T>,
}

impl<T: Scalar> BackwardOp<T> for LifBackward<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (inv_tau, _, _) = self.cfg.consts::<T>();
        let leak = T::one() - inv_tau;
        let g = ctx.grad.data();
        let l = self.layout;
        let mut gx = vec![T::zero(); g.len()];
        let mut dv = vec![T::zero(); l.inner];
        for o in 0..l.outer {
            dv.iter_mut().for_each(|v| *v = T::zero());
            for t in (0..l.steps).rev() {
                for (i, dv_i) in dv.iter_mut().enumerate() {
                    let k = l.index(o, t, i);
                    let d = self.h_minus_th[k];
                    let fired = if d >= T::zero() { T::one() } else { T::zero() };
                    let dh = g[k] * self.cfg.surrogate.derivative(d) + *dv_i * (T::one() - fired);
                    gx[k] = dh * inv_tau;
                    *dv_i = dh * leak;
                }
            }
        }
        Ok(vec![Some(Tensor::new(ctx.inputs[0].shape(), gx)?)])
    }
}

impl<T: Scalar> Tape<T> {
    /// Spike layer over `time_axis` of `x`, starting from the reset potential.
    pub fn lif(&mut self, x: Var, time_axis: usize, cfg: &LifConfig) -> Result<Var> {
        let xv = self.value(x);
        let l = TimeLayout::new(xv.shape(), time_axis)?;
        let (inv_tau, v_th, v_reset) = cfg.consts::<T>();
        let relaxed = self.relaxed_spikes();
        let xd = xv.data();
        let mut out = vec![T::zero(); xd.len()];
        let mut h_minus_th = vec![T::zero(); xd.len()];
        let mut v = vec![v_reset; l.inner];
        for o in 0..l.outer {
            v.iter_mut().for_each(|v| *v = v_reset);
            for t in 0..l.steps {
                for (i, v_i) in v.iter_mut().enumerate() {
                    let k = l.index(o, t, i);
                    let (h, s, v_new) = step(xd[k], *v_i, inv_tau, v_th, v_reset);
                    *v_i = v_new;
                    h_minus_th[k] = h - v_th;
                    out[k] = if relaxed { cfg.surrogate.relaxed(h - v_th) } else { s };
                }
            }
        }
        let shape = xv.shape().to_vec();
        if relaxed {
            let codes: Vec<u8> = h_minus_th.iter().map(|&d| cfg.surrogate.region(d)).collect();
            self.record_spike_regions(codes);
        }
        let rule = LifBackward {
            cfg: *cfg,
            layout: l,
            h_minus_th,
        };
        Ok(self.push(Tensor::new(&shape, out)?, vec![x], rule))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamStore;

    fn scalar_step(v_prev: f64, x: f64) -> (f64, f64) {
        let cfg = LifConfig::default();
        let (s, st) = lif_step(
            &Tensor::from_f64(&[1], &[x]).unwrap(),
            &LifState {
                v: Tensor::from_f64(&[1], &[v_prev]).unwrap(),
            },
            &cfg,
        )
        .unwrap();
        (s.data()[0], st.v.data()[0])
    }

    #[test]
    fn hand_evaluated_steps() {
        assert_eq!(scalar_step(0.0, 0.0), (0.0, 0.0));
        // H = 0.5 + 0.5 * (2 - 0.5) = 1.25 -> fires, resets
        assert_eq!(scalar_step(0.5, 2.0), (1.0, 0.0));
        // H = 0.5 stays below threshold
        assert_eq!(scalar_step(0.0, 1.0), (0.0, 0.5));
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let cfg = LifConfig::default();
        let st = LifState::<f64>::at_reset(&[3], &cfg);
        assert!(lif_step(&Tensor::zeros(&[4]), &st, &cfg).is_err());
    }

    #[test]
    fn constant_drive_sequences() {
        let cfg = LifConfig::default();
        let ones = Tensor::<f64>::ones(&[3, 1]);
        assert!(lif_sequence(&ones, &cfg).unwrap().data().iter().all(|&s| s == 0.0));
        let twos = Tensor::<f64>::full(&[3, 1], 2.0);
        assert_eq!(lif_sequence(&twos, &cfg).unwrap().data()[0], 1.0);
    }

    #[test]
    fn surrogate_window() {
        let cfg = LifConfig::default();
        let d = Tensor::<f64>::from_f64(&[3], &[0.0, 0.6, -0.49]).unwrap();
        let g = heaviside_surrogate_backward(&d, &Tensor::ones(&[3]), &cfg).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = LifConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.tau = 1.0;
        assert!(cfg.validate().is_err());
        let cfg = LifConfig {
            v_reset: 1.0,
            ..LifConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tape_op_matches_sequence() {
        let cfg = LifConfig::default();
        let x = Tensor::<f64>::from_fn(&[5, 2, 3], |i| ((i * 7919) % 13) as f64 * 0.3 - 0.5);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let s = tape.lif(xv, 0, &cfg).unwrap();
        assert_eq!(tape.value(s), &lif_sequence(&x, &cfg).unwrap());
    }

    #[test]
    fn time_axis_in_the_middle() {
        let cfg = LifConfig::default();
        // [batch=2, T=3, features=2]; compare against per-sample sequences
        let x = Tensor::<f64>::from_fn(&[2, 3, 2], |i| 0.4 * i as f64);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let s = tape.lif(xv, 1, &cfg).unwrap();
        for b in 0..2 {
            let xs = Tensor::new(&[3, 2], x.data()[b * 6..(b + 1) * 6].to_vec()).unwrap();
            let want = lif_sequence(&xs, &cfg).unwrap();
            assert_eq!(&tape.value(s).data()[b * 6..(b + 1) * 6], want.data());
        }
    }

    #[test]
    fn backward_through_reset_is_detached() {
        // single neuron, 2 steps: x = [2, 0.4]. Step 1 fires and resets, so
        // step 2's potential does not depend on x[0].
        let cfg = LifConfig::default();
        let mut tape = Tape::<f64>::new();
        let mut store = ParamStore::new();
        let x = tape.leaf(Tensor::from_f64(&[2], &[2.0, 1.6]).unwrap(), true);
        let s = tape.lif(x, 0, &cfg).unwrap();
        let pick = tape.constant(Tensor::from_f64(&[2], &[0.0, 1.0]).unwrap());
        let y = tape.mul(s, pick).unwrap();
        let loss = tape.sum_all(y);
        let g = tape.backward(loss, &mut store).unwrap();
        // H[1] = 0.8, in window: dS/dx[1] = 1 * 1/tau
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.5]);
    }
}
