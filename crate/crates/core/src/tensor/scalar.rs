use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of a [`Tensor`](super::Tensor): `f32` for training, `f64`
/// for gradient checks and oracles.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    /// `c = alpha * a @ b + beta * c` over strided row/column layouts.
    ///
    /// Strides are in elements. Callers guarantee every addressed element lies
    /// inside the given slices.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    /// `exp(self) - 1` as used in hot loops. `f32` uses an inlined
    /// polynomial that vectorizes; `f64` defers to the library routine.
    fn exp_m1_kernel(self) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

fn max_offset(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs.unsigned_abs() + (cols - 1) * cs.unsigned_abs()
}

/// `exp(x) - 1` for `f32` via `x = k ln 2 + r`, `|r| <= ln 2 / 2`, and a
/// degree-8 Taylor polynomial for `expm1(r)`.
#[inline(always)]
fn expm1_f32(x: f32) -> f32 {
    const SHIFTER: f32 = 12_582_912.0;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    let x = x.clamp(-87.0, 88.0);
    let kf = (x * std::f32::consts::LOG2_E + SHIFTER) - SHIFTER;
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    let p = r
        * (1.0
            + r * (0.5
                + r * (1.0 / 6.0
                    + r * (1.0 / 24.0
                        + r * (1.0 / 120.0 + r * (1.0 / 720.0 + r * (1.0 / 5040.0 + r * (1.0 / 40320.0))))))));
    let scale = f32::from_bits(((kf as i32 + 127) as u32) << 23);
    scale * p + (scale - 1.0)
}

macro_rules! impl_scalar {
    ($t:ty, $dtype:expr, $kernel:path, $expm1:expr) => {
        impl Scalar for $t {
            const DTYPE: DType = $dtype;

            #[inline(always)]
            fn exp_m1_kernel(self) -> Self {
                $expm1(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(
                    k == 0 || max_offset(m, k, a_strides) < a.len(),
                    "gemm: lhs out of bounds"
                );
                assert!(
                    k == 0 || max_offset(k, n, b_strides) < b.len(),
                    "gemm: rhs out of bounds"
                );
                assert!(
                    max_offset(m, n, c_strides) < c.len(),
                    "gemm: output out of bounds"
                );
                // SAFETY: all strides are non-negative in this crate and the
                // asserts above bound every addressed element.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, DType::F32, matrixmultiply::sgemm, expm1_f32);
impl_scalar!(f64, DType::F64, matrixmultiply::dgemm, f64::exp_m1);
