//! Minimal CPU tensor engine: NCHW `f32` tensors and the handful of layers
//! the segmentation network needs, each with a hand-written backward pass.
//!
//! Convolutions lower to `im2col` + SGEMM. All reductions run in a fixed
//! order on one thread, so results are bitwise reproducible.

mod layers;
mod tensor;

pub use layers::{BatchNorm2d, BnCache, Conv2d, ConvTranspose2x2};
pub use tensor::{Param, Tensor};

/// `c = a * b + beta * c` on row/column-strided views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= span(m, k, rsa, csa), "gemm: A too short");
    assert!(b.len() >= span(k, n, rsb, csb), "gemm: B too short");
    assert!(c.len() >= span(m, n, rsc, csc), "gemm: C too short");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

pub(crate) fn relu_inplace(t: &mut Tensor) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero the upstream gradient wherever the ReLU output was clamped.
pub(crate) fn relu_backward_inplace(out: &Tensor, grad: &mut Tensor) {
    for (g, &o) in grad.data_mut().iter_mut().zip(out.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}
