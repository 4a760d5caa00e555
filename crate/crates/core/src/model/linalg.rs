//! Dense kernels shared by the layers: GEMM and im2col.

/// `c = alpha * op(a) * op(b) + beta * c` with row-major storage.
///
/// `op(a)` is `m x k` and `op(b)` is `k x n`. A transposed operand is
/// stored in its untransposed shape (`k x m` for `a`, `n x k` for `b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements (checked
    // above in debug builds, guaranteed by every caller) and the strides
    // describe dense row-major layouts of those shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output spatial size of a "same"-padded convolution.
pub(crate) fn conv_out_dims(h: usize, w: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let pad = kernel / 2;
    (
        (h + 2 * pad - kernel) / stride + 1,
        (w + 2 * pad - kernel) / stride + 1,
    )
}

/// Unfolds `x` (`c x h x w`) into a `(c*k*k) x (ho*wo)` patch matrix.
pub(crate) fn im2col(x: &[f64], c: usize, h: usize, w: usize, kernel: usize, stride: usize) -> Vec<f64> {
    let (ho, wo) = conv_out_dims(h, w, kernel, stride);
    let pad = kernel as isize / 2;
    let p = ho * wo;
    let mut cols = vec![0.0; c * kernel * kernel * p];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ch * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto `c x h x w`.
pub(crate) fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    let (ho, wo) = conv_out_dims(h, w, kernel, stride);
    let pad = kernel as isize / 2;
    let p = ho * wo;
    let mut x = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ch * kernel + ky) * kernel + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Nearest-neighbour 2x upsampling of a `c x h x w` buffer.
pub(crate) fn upsample2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                out[(ch * h2 + y) * w2 + xx] = x[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2x2 block. `h`, `w` are the
/// pre-upsampling dimensions.
pub(crate) fn upsample2_backward(dy: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                dx[(ch * h + y / 2) * w + xx / 2] += dy[(ch * h2 + y) * w2 + xx];
            }
        }
    }
    dx
}
