//! Thin, bounds-checked wrappers over `matrixmultiply` for the three products a
//! dense layer needs. All buffers are row-major.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating point type a network can be instantiated with.
///
/// Training runs in `f32`; `f64` instances exist so gradient checks can use
/// finite differences without drowning in rounding error.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` with explicit strides.
    ///
    /// # Safety
    /// Every index reachable through the given dimensions and strides must be
    /// in bounds for the corresponding pointer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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

    fn lit(x: f64) -> Self {
        Self::from(x).expect("literal representable")
    }
}

impl Real for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `z = x · wᵀ + b` for `x: batch×inp`, `w: out×inp`, `z: batch×out`.
pub(crate) fn affine<T: Real>(x: &[T], w: &[T], b: &[T], z: &mut [T], batch: usize, inp: usize, out: usize) {
    assert_eq!(x.len(), batch * inp);
    assert_eq!(w.len(), out * inp);
    assert_eq!(b.len(), out);
    assert_eq!(z.len(), batch * out);
    for row in z.chunks_exact_mut(out) {
        row.copy_from_slice(b);
    }
    if batch == 0 {
        return;
    }
    // SAFETY: the asserts above pin every buffer to the extents used below.
    unsafe {
        T::gemm(
            batch,
            inp,
            out,
            T::one(),
            x.as_ptr(),
            inp as isize,
            1,
            w.as_ptr(),
            1,
            inp as isize,
            T::one(),
            z.as_mut_ptr(),
            out as isize,
            1,
        );
    }
}

/// `dw += dzᵀ · x` for `dz: batch×out`, `x: batch×inp`, `dw: out×inp`.
pub(crate) fn accumulate_weight_grad<T: Real>(
    dz: &[T],
    x: &[T],
    dw: &mut [T],
    batch: usize,
    inp: usize,
    out: usize,
) {
    assert_eq!(dz.len(), batch * out);
    assert_eq!(x.len(), batch * inp);
    assert_eq!(dw.len(), out * inp);
    if batch == 0 {
        return;
    }
    // SAFETY: extents checked above.
    unsafe {
        T::gemm(
            out,
            batch,
            inp,
            T::one(),
            dz.as_ptr(),
            1,
            out as isize,
            x.as_ptr(),
            inp as isize,
            1,
            T::one(),
            dw.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
}

/// `dx = dz · w` for `dz: batch×out`, `w: out×inp`, `dx: batch×inp`.
pub(crate) fn input_grad<T: Real>(dz: &[T], w: &[T], dx: &mut [T], batch: usize, inp: usize, out: usize) {
    assert_eq!(dz.len(), batch * out);
    assert_eq!(w.len(), out * inp);
    assert_eq!(dx.len(), batch * inp);
    if batch == 0 {
        return;
    }
    // SAFETY: extents checked above.
    unsafe {
        T::gemm(
            batch,
            out,
            inp,
            T::one(),
            dz.as_ptr(),
            out as isize,
            1,
            w.as_ptr(),
            inp as isize,
            1,
            T::zero(),
            dx.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_affine(x: &[f64], w: &[f64], b: &[f64], batch: usize, inp: usize, out: usize) -> Vec<f64> {
        let mut z = vec![0.0; batch * out];
        for r in 0..batch {
            for o in 0..out {
                let mut acc = b[o];
                for i in 0..inp {
                    acc += x[r * inp + i] * w[o * inp + i];
                }
                z[r * out + o] = acc;
            }
        }
        z
    }

    #[test]
    fn affine_matches_naive_loops() {
        let (batch, inp, out) = (3, 4, 5);
        let x: Vec<f64> = (0..batch * inp).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..out * inp).map(|i| (i as f64 * 0.11).cos()).collect();
        let b: Vec<f64> = (0..out).map(|i| i as f64 * 0.1).collect();
        let mut z = vec![0.0; batch * out];
        affine(&x, &w, &b, &mut z, batch, inp, out);
        let expect = naive_affine(&x, &w, &b, batch, inp, out);
        for (a, e) in z.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_and_input_grads_match_naive_loops() {
        let (batch, inp, out) = (4, 3, 2);
        let x: Vec<f64> = (0..batch * inp).map(|i| i as f64 - 5.0).collect();
        let dz: Vec<f64> = (0..batch * out).map(|i| (i as f64).sqrt()).collect();
        let w: Vec<f64> = (0..out * inp).map(|i| 1.0 + i as f64).collect();

        let mut dw = vec![1.0; out * inp];
        accumulate_weight_grad(&dz, &x, &mut dw, batch, inp, out);
        for o in 0..out {
            for i in 0..inp {
                let mut acc = 1.0;
                for r in 0..batch {
                    acc += dz[r * out + o] * x[r * inp + i];
                }
                assert!((dw[o * inp + i] - acc).abs() < 1e-12);
            }
        }

        let mut dx = vec![f64::NAN; batch * inp];
        input_grad(&dz, &w, &mut dx, batch, inp, out);
        for r in 0..batch {
            for i in 0..inp {
                let acc: f64 = (0..out).map(|o| dz[r * out + o] * w[o * inp + i]).sum();
                assert!((dx[r * inp + i] - acc).abs() < 1e-12);
            }
        }
    }
}
