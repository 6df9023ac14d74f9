use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Element type of a [`Tensor`](super::Tensor).
///
/// Implemented for `f32` (training) and `f64` (gradient verification).
pub trait Scalar:
    Float
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C ← α·A·B + β·C` over strided row/column layouts.
    ///
    /// # Safety
    /// Every pointer/stride combination must address valid memory for the
    /// given `m × k`, `k × n` and `m × n` extents, and `c` must not alias
    /// `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided view description for [`gemm`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Strided {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Strided {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Strided { rows, cols, rs: cols, cs: 1 }
    }

    pub fn transposed(self) -> Self {
        Strided {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    /// Largest linear index touched, plus one.
    fn extent(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// Bounds-checked strided matrix product `C ← A·B + β·C`.
///
/// `a` may describe overlapping rows (as used for sliding convolution
/// patches); `c` must be a distinct buffer.
pub(crate) fn gemm<T: Scalar>(a: &[T], sa: Strided, b: &[T], sb: Strided, beta: T, c: &mut [T], sc: Strided) {
    assert_eq!(sa.cols, sb.rows, "gemm inner dimension");
    assert_eq!(sa.rows, sc.rows, "gemm output rows");
    assert_eq!(sb.cols, sc.cols, "gemm output cols");
    assert!(sa.extent() <= a.len(), "gemm lhs out of bounds");
    assert!(sb.extent() <= b.len(), "gemm rhs out of bounds");
    assert!(sc.extent() <= c.len(), "gemm output out of bounds");
    if sc.rows == 0 || sc.cols == 0 {
        return;
    }
    if sa.cols == 0 {
        for i in 0..sc.rows {
            for j in 0..sc.cols {
                let v = &mut c[i * sc.rs + j * sc.cs];
                *v = if beta == T::zero() { T::zero() } else { *v * beta };
            }
        }
        return;
    }
    // SAFETY: extents were checked above; `c` is uniquely borrowed so it
    // cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            sa.rows,
            sa.cols,
            sb.cols,
            T::one(),
            a.as_ptr(),
            sa.rs as isize,
            sa.cs as isize,
            b.as_ptr(),
            sb.rs as isize,
            sb.cs as isize,
            beta,
            c.as_mut_ptr(),
            sc.rs as isize,
            sc.cs as isize,
        )
    }
}
