//! 2-D convolution and stride-2 transposed convolution, both expressed as
//! im2col/col2im plus a single GEMM, with exact backward passes.
//!
//! Shapes are channels-first: inputs `(c, h, w)`, conv weights
//! `(c_out, c_in, k, k)`, transposed-conv weights `(c_in, c_out, k, k)`.

use super::Scalar;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView3, ArrayView4};

pub fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unfold `x` into a `(c*k*k, oh*ow)` matrix for a convolution with the
/// given kernel/stride/padding geometry.
pub fn im2col<S: Scalar>(
    x: &ArrayView3<S>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<S> {
    let (c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut cols = Array2::<S>::zeros((c * k * k, oh * ow));
    let cs = cols.as_slice_mut().expect("contiguous");
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let row_base = row * oh * ow;
                for oi in 0..oh {
                    let iy = (oi * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let in_base = ci * h * w + iy as usize * w;
                    let out_base = row_base + oi * ow;
                    for oj in 0..ow {
                        let ix = (oj * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cs[out_base + oj] = xs[in_base + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: fold a `(c*k*k, oh*ow)` matrix back onto a
/// `(c, h, w)` grid, accumulating overlaps.
pub fn col2im<S: Scalar>(
    cols: &Array2<S>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array3<S> {
    let mut x = Array3::<S>::zeros((c, h, w));
    let xs = x.as_slice_mut().expect("contiguous");
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("contiguous");
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let row_base = row * oh * ow;
                for oi in 0..oh {
                    let iy = (oi * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let in_base = ci * h * w + iy as usize * w;
                    let out_base = row_base + oi * ow;
                    for oj in 0..ow {
                        let ix = (oj * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        xs[in_base + ix as usize] = xs[in_base + ix as usize] + cs[out_base + oj];
                    }
                }
            }
        }
    }
    x
}

/// `y = w * x + b` with "same" geometry when `pad = k/2`, `stride = 1`.
pub fn conv2d<S: Scalar>(
    x: &ArrayView3<S>,
    w: &ArrayView4<S>,
    b: &[S],
    stride: usize,
    pad: usize,
) -> Array3<S> {
    let (c_out, c_in, k, _) = w.dim();
    let (cx, h, wdt) = x.dim();
    debug_assert_eq!(cx, c_in, "conv input channels");
    let oh = conv_out_size(h, k, stride, pad);
    let ow = conv_out_size(wdt, k, stride, pad);
    let cols = im2col(x, k, stride, pad, oh, ow);
    let w_mat = w
        .to_shape((c_out, c_in * k * k))
        .expect("weight reshape");
    let mut y = w_mat.dot(&cols);
    for (mut row, bi) in y.outer_iter_mut().zip(b.iter()) {
        row.mapv_inplace(|v| v + *bi);
    }
    y.into_shape_with_order((c_out, oh, ow)).expect("shape")
}

/// Gradients of [`conv2d`] w.r.t. input, weight, and bias.
pub fn conv2d_backward<S: Scalar>(
    x: &ArrayView3<S>,
    w: &ArrayView4<S>,
    dy: &ArrayView3<S>,
    stride: usize,
    pad: usize,
) -> (Array3<S>, Array4<S>, Array1<S>) {
    let (c_out, c_in, k, _) = w.dim();
    let (_, h, wdt) = x.dim();
    let (_, oh, ow) = dy.dim();
    let cols = im2col(x, k, stride, pad, oh, ow);
    let dy_std = dy.as_standard_layout();
    let dy_mat = dy_std
        .to_shape((c_out, oh * ow))
        .expect("dy reshape");
    let dw = dy_mat
        .dot(&cols.t())
        .into_shape_with_order((c_out, c_in, k, k))
        .expect("dw shape");
    let db = dy_mat.sum_axis(ndarray::Axis(1));
    let w_mat = w
        .to_shape((c_out, c_in * k * k))
        .expect("weight reshape");
    let dcols = w_mat.t().dot(&dy_mat);
    let dx = col2im(&dcols, c_in, h, wdt, k, stride, pad, oh, ow);
    (dx, dw, db)
}

/// Stride-2 transposed convolution with 3x3 kernels that exactly doubles
/// the spatial size (pad 1, output padding 1). Weight is `(c_in, c_out, 3, 3)`.
pub fn tconv2d<S: Scalar>(x: &ArrayView3<S>, w: &ArrayView4<S>, b: &[S]) -> Array3<S> {
    let (c_in, c_out, k, _) = w.dim();
    let (cx, h, wdt) = x.dim();
    debug_assert_eq!(cx, c_in, "tconv input channels");
    let (oh, ow) = (2 * h, 2 * wdt);
    let w_mat = w
        .to_shape((c_in, c_out * k * k))
        .expect("weight reshape");
    let x_std = x.as_standard_layout();
    let x_mat = x_std.to_shape((c_in, h * wdt)).expect("x reshape");
    let cols = w_mat.t().dot(&x_mat);
    let mut y = col2im(&cols, c_out, oh, ow, k, 2, 1, h, wdt);
    for (mut ch, bi) in y.outer_iter_mut().zip(b.iter()) {
        ch.mapv_inplace(|v| v + *bi);
    }
    y
}

/// Gradients of [`tconv2d`] w.r.t. input, weight, and bias.
pub fn tconv2d_backward<S: Scalar>(
    x: &ArrayView3<S>,
    w: &ArrayView4<S>,
    dy: &ArrayView3<S>,
) -> (Array3<S>, Array4<S>, Array1<S>) {
    let (c_in, c_out, k, _) = w.dim();
    let (_, h, wdt) = x.dim();
    let dy_cols = im2col(dy, k, 2, 1, h, wdt); // (c_out*k*k, h*w)
    let w_mat = w
        .to_shape((c_in, c_out * k * k))
        .expect("weight reshape");
    let dx = w_mat
        .dot(&dy_cols)
        .into_shape_with_order((c_in, h, wdt))
        .expect("dx shape");
    let x_std = x.as_standard_layout();
    let x_mat = x_std.to_shape((c_in, h * wdt)).expect("x reshape");
    let dw = x_mat
        .dot(&dy_cols.t())
        .into_shape_with_order((c_in, c_out, k, k))
        .expect("dw shape");
    let mut db = Array1::<S>::zeros(c_out);
    for (ci, ch) in dy.outer_iter().enumerate() {
        db[ci] = ch.iter().copied().sum();
    }
    (dx, dw, db)
}
