//! Zero-order-hold discretization and the selective scan.
//!
//! With a diagonal state matrix every (channel, state) pair is an independent
//! scalar system:
//!
//! ```text
//! A_bar = exp(delta * a)
//! B_bar = (exp(delta * a) - 1) / (delta * a) * delta * b
//! z[t]  = A_bar[t] * z[t-1] + B_bar[t] * u[t]
//! y[t]  = sum_s c[t, s] * z[t, s]
//! ```

use crate::error::{dim_err, Error, Result};
use crate::tensor::{BackwardCtx, BackwardOp, Scalar, Tape, Tensor, Var};

/// Below this `|delta * a|` the input factor uses its Taylor expansion.
pub const SERIES_GUARD: f64 = 1e-6;
const DERIVATIVE_GUARD: f64 = 1e-3;

/// `(exp(x) - 1) / x` from `x` and `exp(x) - 1`.
#[inline]
fn factor_from_em1<T: Scalar>(x: T, em1: T) -> T {
    let series = T::one() + x * (T::from_f64_lossy(0.5) + x * T::from_f64_lossy(1.0 / 6.0));
    let direct = em1 / x;
    if x.abs() < T::from_f64_lossy(SERIES_GUARD) {
        series
    } else {
        direct
    }
}

/// `(exp(x) - 1) / x`, returning `(exp(x), factor)`.
#[cfg(test)]
fn input_factor<T: Scalar>(x: T) -> (T, T) {
    let em1 = x.exp_m1();
    (T::one() + em1, factor_from_em1(x, em1))
}

/// Derivative of `(exp(x) - 1) / x` given `exp(x)` and the factor itself.
#[inline]
fn input_factor_derivative<T: Scalar>(x: T, exp_x: T, phi: T) -> T {
    let series = T::from_f64_lossy(0.5) + x * (T::from_f64_lossy(1.0 / 3.0) + x * T::from_f64_lossy(0.125));
    let direct = (exp_x - phi) / x;
    if x.abs() < T::from_f64_lossy(DERIVATIVE_GUARD) {
        series
    } else {
        direct
    }
}

fn check_stable<T: Scalar>(a: &Tensor<T>) -> Result<()> {
    if let Some(v) = a.data().iter().find(|&&v| !(v < T::zero())) {
        return Err(Error::Stability(format!(
            "state matrix entries must be negative, found {v}"
        )));
    }
    Ok(())
}

/// Discretizes a diagonal `a` (`[D, N]`) with per-channel steps `delta`
/// (`[..., D]`). Returns `(A_bar, B_factor)`, both `[..., D, N]`, where
/// `B_bar = B_factor * b`.
pub fn zoh_discretize<T: Scalar>(a: &Tensor<T>, delta: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    if a.rank() != 2 || delta.rank() < 1 || delta.shape()[delta.rank() - 1] != a.shape()[0] {
        return Err(dim_err!(
            "zoh expects a [D, N] and delta [..., D], got {:?} and {:?}",
            a.shape(),
            delta.shape()
        ));
    }
    check_stable(a)?;
    let (d, n) = (a.shape()[0], a.shape()[1]);
    let mut shape = delta.shape().to_vec();
    shape.push(n);
    let mut a_bar = Vec::with_capacity(delta.len() * n);
    let mut b_factor = Vec::with_capacity(delta.len() * n);
    for (k, &dt) in delta.data().iter().enumerate() {
        let row = &a.data()[(k % d) * n..(k % d + 1) * n];
        for &av in row {
            let x = dt * av;
            a_bar.push(x.exp());
            b_factor.push(dt * factor_from_em1(x, x.exp_m1()));
        }
    }
    Ok((Tensor::new(&shape, a_bar)?, Tensor::new(&shape, b_factor)?))
}

/// Sequential scan over axis 1. `u` is `[B, L, D]`, `a_bar` and `b_bar` are
/// `[B, L, D, N]`, `c` is `[B, L, N]`; the state starts at zero.
pub fn selective_scan<T: Scalar>(
    u: &Tensor<T>,
    a_bar: &Tensor<T>,
    b_bar: &Tensor<T>,
    c: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [batch, len, d]: [usize; 3] = u
        .shape()
        .try_into()
        .map_err(|_| dim_err!("scan input must be [B, L, D], got {:?}", u.shape()))?;
    if c.rank() != 3 || c.shape()[..2] != [batch, len] {
        return Err(dim_err!("scan c {:?} does not match u {:?}", c.shape(), u.shape()));
    }
    let n = c.shape()[2];
    let full = [batch, len, d, n];
    if a_bar.shape() != full || b_bar.shape() != full {
        return Err(dim_err!(
            "scan transitions must be {full:?}, got {:?} and {:?}",
            a_bar.shape(),
            b_bar.shape()
        ));
    }
    let mut y = vec![T::zero(); u.len()];
    let mut z = vec![T::zero(); d * n];
    for b in 0..batch {
        z.iter_mut().for_each(|v| *v = T::zero());
        for t in 0..len {
            let bt = b * len + t;
            let cs = &c.data()[bt * n..(bt + 1) * n];
            for i in 0..d {
                let ut = u.data()[bt * d + i];
                let base = (bt * d + i) * n;
                let mut acc = T::zero();
                for s in 0..n {
                    let zs = &mut z[i * n + s];
                    *zs = a_bar.data()[base + s] * *zs + b_bar.data()[base + s] * ut;
                    acc += cs[s] * *zs;
                }
                y[bt * d + i] = acc;
            }
        }
    }
    Tensor::new(u.shape(), y)
}

struct Dims {
    batch: usize,
    len: usize,
    d: usize,
    n: usize,
}

fn fused_dims(u: &[usize], delta: &[usize], a: &[usize], b: &[usize], c: &[usize]) -> Result<Dims> {
    if u.len() != 3 || delta != u || a.len() != 2 || a[0] != u[2] {
        return Err(dim_err!(
            "ssm expects u, delta [B, L, D] and a [D, N]; got u {u:?}, delta {delta:?}, a {a:?}"
        ));
    }
    let n = a[1];
    let want = [u[0], u[1], n];
    if b != want || c != want {
        return Err(dim_err!("ssm b/c must be {want:?}, got {b:?} and {c:?}"));
    }
    Ok(Dims {
        batch: u[0],
        len: u[1],
        d: u[2],
        n,
    })
}

struct SsmBackward<T> {
    /// State after every step, `[B, L, D, N]`.
    states: Vec<T>,
    /// `exp(delta * a) - 1` at every step, same layout.
    em1: Vec<T>,
}

impl<T: Scalar> BackwardOp<T> for SsmBackward<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let [u, delta, a, bm, cm] = ctx.inputs[..] else {
            unreachable!("ssm has five inputs")
        };
        let Dims { batch, len, d, n } = fused_dims(u.shape(), delta.shape(), a.shape(), bm.shape(), cm.shape())?;
        let (ud, dd, ad, bd, cd) = (u.data(), delta.data(), a.data(), bm.data(), cm.data());
        let gy = ctx.grad.data();
        let mut gu = vec![T::zero(); u.len()];
        let mut gdelta = vec![T::zero(); delta.len()];
        let mut ga = vec![T::zero(); a.len()];
        let mut gb = vec![T::zero(); bm.len()];
        let mut gc = vec![T::zero(); cm.len()];
        // dL/dz[t] carried backwards through the transition.
        let mut carry = vec![T::zero(); d * n];
        let zeros = vec![T::zero(); n];
        let mut part_u = vec![T::zero(); n];
        let mut part_dt = vec![T::zero(); n];
        for b in 0..batch {
            carry.iter_mut().for_each(|v| *v = T::zero());
            for t in (0..len).rev() {
                let bt = b * len + t;
                let row = bt * n..(bt + 1) * n;
                let (brow, crow) = (&bd[row.clone()], &cd[row.clone()]);
                for i in 0..d {
                    let k = bt * d + i;
                    let (dt, ut, g) = (dd[k], ud[k], gy[k]);
                    let z_now = &self.states[k * n..(k + 1) * n];
                    let z_prev = if t > 0 {
                        &self.states[(k - d) * n..(k - d + 1) * n]
                    } else {
                        &zeros[..]
                    };
                    let em1 = &self.em1[k * n..(k + 1) * n];
                    let arow = &ad[i * n..(i + 1) * n];
                    let carry = &mut carry[i * n..(i + 1) * n];
                    let ga = &mut ga[i * n..(i + 1) * n];
                    let gb = &mut gb[row.clone()];
                    let gc = &mut gc[row.clone()];
                    for s in 0..n {
                        gc[s] += g * z_now[s];
                        let gz = carry[s] + crow[s] * g;
                        let av = arow[s];
                        let x = dt * av;
                        let a_bar = T::one() + em1[s];
                        let phi = factor_from_em1(x, em1[s]);
                        let bf = dt * phi;
                        // z = a_bar * z_prev + bf * b * u
                        part_u[s] = gz * bf * brow[s];
                        gb[s] += gz * bf * ut;
                        let g_abar = gz * z_prev[s];
                        let g_bf = gz * brow[s] * ut;
                        let dphi = input_factor_derivative(x, a_bar, phi);
                        part_dt[s] = g_abar * a_bar * av + g_bf * (phi + x * dphi);
                        ga[s] += g_abar * a_bar * dt + g_bf * dt * dt * dphi;
                        carry[s] = gz * a_bar;
                    }
                    gu[k] = part_u.iter().fold(T::zero(), |a, &v| a + v);
                    gdelta[k] = part_dt.iter().fold(T::zero(), |a, &v| a + v);
                }
            }
        }
        let grads = [(u, gu), (delta, gdelta), (a, ga), (bm, gb), (cm, gc)];
        grads
            .into_iter()
            .zip(&ctx.needs)
            .map(|((x, g), &need)| need.then(|| Tensor::new(x.shape(), g)).transpose())
            .collect()
    }
}

impl<T: Scalar> Tape<T> {
    /// Discretize-and-scan in one pass: equivalent to [`zoh_discretize`]
    /// followed by [`selective_scan`] with `b_bar = B_factor * b`, without
    /// materializing the `[B, L, D, N]` transition tensors.
    pub fn selective_ssm(&mut self, u: Var, delta: Var, a: Var, b: Var, c: Var) -> Result<Var> {
        let (uv, dv, av, bv, cv) = (
            self.value(u),
            self.value(delta),
            self.value(a),
            self.value(b),
            self.value(c),
        );
        let Dims { batch, len, d, n } = fused_dims(uv.shape(), dv.shape(), av.shape(), bv.shape(), cv.shape())?;
        check_stable(av)?;
        let keep = [u, delta, a, b, c].iter().any(|&v| self.requires_grad(v));
        let (ud, dd, ad, bd, cd) = (uv.data(), dv.data(), av.data(), bv.data(), cv.data());
        let mut y = vec![T::zero(); uv.len()];
        // With gradients every step's state and `exp(delta a) - 1` are kept
        // for the backward pass; otherwise one rolling state suffices.
        let mut states = vec![T::zero(); if keep { uv.len() * n } else { d * n }];
        let mut em1s = vec![T::zero(); if keep { uv.len() * n } else { n }];
        for b in 0..batch {
            if !keep {
                states.iter_mut().for_each(|v| *v = T::zero());
            }
            for t in 0..len {
                let bt = b * len + t;
                let brow = &bd[bt * n..(bt + 1) * n];
                let crow = &cd[bt * n..(bt + 1) * n];
                for i in 0..d {
                    let k = bt * d + i;
                    let (dt, ut) = (dd[k], ud[k]);
                    let arow = &ad[i * n..(i + 1) * n];
                    let (z_off, e_off) = if keep { (k * n, k * n) } else { (i * n, 0) };
                    if keep && t > 0 {
                        states.copy_within((k - d) * n..(k - d + 1) * n, z_off);
                    }
                    let z = &mut states[z_off..z_off + n];
                    let e = &mut em1s[e_off..e_off + n];
                    for s in 0..n {
                        let x = dt * arow[s];
                        let em1 = x.exp_m1_kernel();
                        e[s] = em1;
                        z[s] = (T::one() + em1) * z[s] + dt * factor_from_em1(x, em1) * brow[s] * ut;
                    }
                    y[k] = z.iter().zip(crow).fold(T::zero(), |acc, (&z, &c)| acc + c * z);
                }
            }
        }
        let out = Tensor::new(uv.shape(), y)?;
        Ok(self.push(out, vec![u, delta, a, b, c], SsmBackward { states, em1: em1s }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_step_unit_decay() {
        let a = Tensor::<f64>::from_f64(&[1, 1], &[-1.0]).unwrap();
        let delta = Tensor::<f64>::from_f64(&[1], &[1.0]).unwrap();
        let (a_bar, bf) = zoh_discretize(&a, &delta).unwrap();
        assert!((a_bar.data()[0] - (-1f64).exp()).abs() < 1e-15);
        assert!((a_bar.data()[0] - 0.36788).abs() < 1e-5);
        assert!((bf.data()[0] - 0.63212).abs() < 1e-5);
    }

    #[test]
    fn tiny_step_is_identity_without_injection() {
        let a = Tensor::<f64>::from_f64(&[1, 2], &[-1.0, -3.0]).unwrap();
        let delta = Tensor::<f64>::from_f64(&[1], &[1e-12]).unwrap();
        let (a_bar, bf) = zoh_discretize(&a, &delta).unwrap();
        assert!(a_bar.data().iter().all(|&v| (v - 1.0).abs() < 1e-11));
        assert!(bf.data().iter().all(|&v| v.abs() < 1e-11));
    }

    #[test]
    fn non_negative_a_is_rejected() {
        let a = Tensor::<f64>::from_f64(&[1, 2], &[-1.0, 0.0]).unwrap();
        let delta = Tensor::<f64>::ones(&[1]);
        assert!(matches!(zoh_discretize(&a, &delta), Err(Error::Stability(_))));
    }

    #[test]
    fn accumulator_case_is_running_sum() {
        let u = Tensor::<f64>::from_f64(&[1, 4, 1], &[1.0, 2.0, -0.5, 4.0]).unwrap();
        let ones = Tensor::<f64>::ones(&[1, 4, 1, 1]);
        let c = Tensor::<f64>::ones(&[1, 4, 1]);
        let y = selective_scan(&u, &ones, &ones, &c).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 2.5, 6.5]);
    }

    #[test]
    fn zero_transition_is_memoryless() {
        let u = Tensor::<f64>::from_f64(&[1, 3, 1], &[1.0, 2.0, 3.0]).unwrap();
        let zero = Tensor::<f64>::zeros(&[1, 3, 1, 2]);
        let b = Tensor::<f64>::full(&[1, 3, 1, 2], 0.5);
        let c = Tensor::<f64>::ones(&[1, 3, 2]);
        let y = selective_scan(&u, &zero, &b, &c).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn factor_series_is_continuous_at_guard() {
        for x in [-2e-6, -1.0000001e-6, -0.9999999e-6, -1e-9] {
            let (_, phi) = input_factor::<f64>(x);
            assert!((phi - x.exp_m1() / x).abs() < 1e-12);
            let (e, phi) = input_factor::<f64>(x);
            let d = input_factor_derivative(x, e, phi);
            assert!((d - (0.5 + x / 3.0)).abs() < 1e-9);
        }
    }
}
