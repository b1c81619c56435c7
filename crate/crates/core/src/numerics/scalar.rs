use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of every tensor: `f32` for training, `f64` for verification.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static {
    /// `c = a · b + beta · c` on strided row/column-major views.
    ///
    /// `a` is `m × k`, `b` is `k × n`, `c` is `m × n`; strides are in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float")
    }
}

fn max_offset(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs as usize + (cols - 1) * cs as usize
}

fn check_view(len: usize, rows: usize, cols: usize, strides: (isize, isize)) {
    assert!(strides.0 >= 0 && strides.1 >= 0, "negative gemm stride");
    if rows > 0 && cols > 0 {
        assert!(
            max_offset(rows, cols, strides) < len,
            "gemm view {rows}x{cols} with strides {strides:?} overruns buffer of {len}"
        );
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
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
                check_view(a.len(), m, k, a_strides);
                check_view(b.len(), k, n, b_strides);
                check_view(c.len(), m, n, c_strides);
                // SAFETY: every view was bounds-checked above and `c` is borrowed mutably,
                // so it cannot alias `a` or `b`.
                unsafe {
                    $kernel(
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
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product_with_transposed_operand() {
        // a: 2x3 row-major, b used as the transpose of a 4x3 row-major buffer.
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect();
        let bt: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect();
        let mut c = vec![1.0f64; 8];
        f64::gemm(2, 3, 4, &a, (3, 1), &bt, (1, 3), 1.0, &mut c, (4, 1));
        for i in 0..2 {
            for j in 0..4 {
                let mut want = 1.0;
                for p in 0..3 {
                    want += a[i * 3 + p] * bt[j * 3 + p];
                }
                assert_eq!(c[i * 4 + j], want);
            }
        }
    }
}
