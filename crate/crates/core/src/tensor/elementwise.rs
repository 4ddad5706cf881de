use super::dense::{broadcast_shapes, broadcast_strides, for_each_broadcast2, sum_to_shape};
use super::tape::{BackwardCtx, BackwardOp, Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }
}

/// Broadcasting elementwise combination.
pub(crate) fn broadcast_binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return Ok(a.zip_map(b, f));
    }
    let out_shape = broadcast_shapes(a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let (da, db) = (a.data(), b.data());
    let mut out = vec![T::zero(); out_shape.iter().product()];
    for_each_broadcast2(&out_shape, &sa, &sb, |o, ia, ib| out[o] = f(da[ia], db[ib]));
    Tensor::new(&out_shape, out)
}

struct BinaryBackward(Binary);

impl<T: Scalar> BackwardOp<T> for BinaryBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
        let ga = if ctx.needs[0] {
            let full = match self.0 {
                Binary::Add | Binary::Sub => g.clone(),
                Binary::Mul => broadcast_binary(g, b, |g, b| g * b)?,
                Binary::Div => broadcast_binary(g, b, |g, b| g / b)?,
            };
            Some(sum_to_shape(&full, a.shape()))
        } else {
            None
        };
        let gb = if ctx.needs[1] {
            let full = match self.0 {
                Binary::Add => g.clone(),
                Binary::Sub => g.map(|v| -v),
                Binary::Mul => broadcast_binary(g, a, |g, a| g * a)?,
                // d(a/b)/db = -out / b
                Binary::Div => {
                    let t = broadcast_binary(g, ctx.output, |g, o| -g * o)?;
                    broadcast_binary(&t, b, |t, b| t / b)?
                }
            };
            Some(sum_to_shape(&full, b.shape()))
        } else {
            None
        };
        Ok(vec![ga, gb])
    }
}

#[derive(Debug, Clone, Copy)]
enum Unary<T> {
    Neg,
    Scale(T),
    AddScalar(T),
    Exp,
    Log,
    Softplus,
    Sigmoid,
    Silu,
    Square,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::from_f64_lossy(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl<T: Scalar> Unary<T> {
    fn apply(self, x: T) -> T {
        match self {
            Unary::Neg => -x,
            Unary::Scale(s) => x * s,
            Unary::AddScalar(s) => x + s,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Silu => x * sigmoid(x),
            Unary::Square => x * x,
        }
    }

    fn derivative(self, x: T, y: T) -> T {
        match self {
            Unary::Neg => -T::one(),
            Unary::Scale(s) => s,
            Unary::AddScalar(_) => T::one(),
            Unary::Exp => y,
            Unary::Log => T::one() / x,
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Unary::Square => x + x,
        }
    }
}

struct UnaryBackward<T>(Unary<T>);

impl<T: Scalar> BackwardOp<T> for UnaryBackward<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let x = ctx.inputs[0].data();
        let y = ctx.output.data();
        let g = ctx.grad.data();
        let data = (0..g.len()).map(|i| g[i] * self.0.derivative(x[i], y[i])).collect();
        Ok(vec![Some(Tensor::new(ctx.output.shape(), data)?)])
    }
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| op.apply(x, y))?;
        Ok(self.push(out, vec![a, b], BinaryBackward(op)))
    }

    fn unary(&mut self, op: Unary<T>, x: Var) -> Var {
        let out = self.value(x).map(|v| op.apply(v));
        self.push(out, vec![x], UnaryBackward(op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(Unary::Neg, x)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(Unary::Scale(s), x)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        self.unary(Unary::AddScalar(s), x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| v <= T::zero()) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(Unary::Log, x))
    }

    /// `log(1 + exp(x))`, returning `x` itself above 30.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(Unary::Silu, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Unary::Square, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamStore;

    #[test]
    fn softplus_of_zero_is_ln2() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.softplus(x);
        assert!((tape.value(y).item().unwrap() - 2f64.ln()).abs() < 1e-15);
        let big = tape.constant(Tensor::scalar(1000.0));
        let y = tape.softplus(big);
        assert_eq!(tape.value(y).item().unwrap(), 1000.0);
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let mut tape = Tape::<f64>::new();
        let data = Tensor::from_f64(&[2, 3], &[1.0, -2.0, 3.5, 0.0, 7.0, -0.25]).unwrap();
        let x = tape.constant(data.clone());
        let ones = tape.constant(Tensor::ones(&[2, 3]));
        let y = tape.mul(x, ones).unwrap();
        assert_eq!(tape.value(y), &data);
    }

    #[test]
    fn silu_of_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.silu(x);
        assert_eq!(tape.value(y).item().unwrap(), 0.0);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[2], &[1.0, 0.0]).unwrap());
        assert!(matches!(tape.log(x), Err(Error::Domain(_))));
    }

    #[test]
    fn broadcast_add_gradient_sums_over_broadcast_axes() {
        let mut tape = Tape::<f64>::new();
        let mut store = ParamStore::new();
        let a = tape.leaf(Tensor::ones(&[3, 4]), true);
        let b = tape.leaf(Tensor::ones(&[4]), true);
        let y = tape.add(a, b).unwrap();
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss, &mut store).unwrap();
        assert!(grads.get(b).unwrap().data().iter().all(|&v| v == 3.0));
        assert!(grads.get(a).unwrap().data().iter().all(|&v| v == 1.0));
    }
}
