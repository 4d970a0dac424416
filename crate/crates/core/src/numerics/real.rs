use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rustfft::FftNum;

/// Floating-point element type for the tensor engine. Implemented for `f32`
/// (training) and `f64` (gradient checks and the simulator).
pub trait Real:
    Float + FftNum + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;

    /// Hyperbolic tangent used by activations; `f32` uses a branch-free
    /// rational approximation that vectorizes.
    fn act_tanh(self) -> Self;

    /// `c = alpha * a * b + beta * c` for row-major `a: m x k`, `b: k x n`.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        Self::gemm_strided(m, k, n, a, (k as isize, 1), b, (n as isize, 1), beta, c);
    }

    /// General matrix product with explicit (row, column) strides for `a`
    /// and `b`; `c` is row-major `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );
}

/// Rational minimax approximation of `tanh` on `[-7.9988, 7.9988]`, accurate
/// to a few ulp in single precision (saturates beyond).
#[inline]
fn tanh_f32(x: f32) -> f32 {
    const A: [f32; 7] = [
        4.893_524_6e-3,
        6.372_619_3e-4,
        1.485_722_4e-5,
        5.122_297e-8,
        -8.604_672e-11,
        2.000_188e-13,
        -2.760_768_5e-16,
    ];
    const B: [f32; 4] = [4.893_525e-3, 2.268_434_7e-3, 1.185_347e-4, 1.198_258_4e-6];
    let x = x.max(-7.998_811_7).min(7.998_811_7);
    let x2 = x * x;
    let mut p = A[6];
    for a in A[..6].iter().rev() {
        p = p * x2 + a;
    }
    let mut q = B[3];
    for b in B[..3].iter().rev() {
        q = q * x2 + b;
    }
    x * p / q
}

macro_rules! impl_real {
    ($t:ty, $gemm:path, $tanh:path) => {
        impl Real for $t {
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn act_tanh(self) -> Self {
                $tanh(self)
            }

            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let last = |rows: usize, cols: usize, s: (isize, isize)| {
                    (rows as isize - 1) * s.0 + (cols as isize - 1) * s.1
                };
                if k > 0 {
                    assert!((last(m, k, a_strides) as usize) < a.len());
                    assert!((last(k, n, b_strides) as usize) < b.len());
                }
                // SAFETY: bounds of every strided access were asserted above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm, tanh_f32);
impl_real!(f64, matrixmultiply::dgemm, f64::tanh);
