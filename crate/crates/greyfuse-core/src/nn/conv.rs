//! Convolution and pooling kernels (im2col + GEMM row-major, single thread).

use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView4, Axis};

pub(crate) fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unfold `x` (N,Cin,H,W) into patch rows of shape (N*Ho*Wo, Cin*kh*kw).
/// Out-of-image taps stay zero (implicit zero padding).
pub fn im2col(
    x: &ArrayView4<f32>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<f32> {
    let (n, cin, h, w) = x.dim();
    let ho = conv_out_len(h, kh, stride, pad);
    let wo = conv_out_len(w, kw, stride, pad);
    let kdim = cin * kh * kw;
    let mut cols = Array2::<f32>::zeros((n * ho * wo, kdim));
    let x_std = x.as_standard_layout();
    let xs = x_std.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("freshly allocated");

    for b in 0..n {
        for oy in 0..ho {
            let iy0 = (oy * stride) as isize - pad as isize;
            for ox in 0..wo {
                let ix0 = (ox * stride) as isize - pad as isize;
                let row = ((b * ho + oy) * wo + ox) * kdim;
                // Clip the kernel window against the image borders.
                let kx_lo = (-ix0).max(0) as usize;
                let kx_hi = ((w as isize - ix0).min(kw as isize)).max(0) as usize;
                if kx_lo >= kx_hi {
                    continue;
                }
                let span = kx_hi - kx_lo;
                for c in 0..cin {
                    for ky in 0..kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = ((b * cin + c) * h + iy as usize) * w
                            + (ix0 + kx_lo as isize) as usize;
                        let dst = row + (c * kh + ky) * kw + kx_lo;
                        cs[dst..dst + span].copy_from_slice(&xs[src..src + span]);
                    }
                }
            }
        }
    }
    cols
}

/// Fold patch-row gradients back onto the input, accumulating overlaps.
/// Inverse layout of [`im2col`].
pub fn col2im(
    cols: &Array2<f32>,
    input_shape: (usize, usize, usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array4<f32> {
    let (n, cin, h, w) = input_shape;
    let ho = conv_out_len(h, kh, stride, pad);
    let wo = conv_out_len(w, kw, stride, pad);
    let kdim = cin * kh * kw;
    debug_assert_eq!(cols.dim(), (n * ho * wo, kdim));
    let mut dx = Array4::<f32>::zeros((n, cin, h, w));
    let cs = cols.as_slice().expect("standard layout");
    let ds = dx.as_slice_mut().expect("freshly allocated");

    for b in 0..n {
        for oy in 0..ho {
            let iy0 = (oy * stride) as isize - pad as isize;
            for ox in 0..wo {
                let ix0 = (ox * stride) as isize - pad as isize;
                let row = ((b * ho + oy) * wo + ox) * kdim;
                let kx_lo = (-ix0).max(0) as usize;
                let kx_hi = ((w as isize - ix0).min(kw as isize)).max(0) as usize;
                if kx_lo >= kx_hi {
                    continue;
                }
                for c in 0..cin {
                    for ky in 0..kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = ((b * cin + c) * h + iy as usize) * w
                            + (ix0 + kx_lo as isize) as usize;
                        let src = row + (c * kh + ky) * kw + kx_lo;
                        for t in 0..(kx_hi - kx_lo) {
                            ds[dst + t] += cs[src + t];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Forward convolution. Returns the output and the unfolded patch matrix
/// (kept on the tape for the backward pass).
pub fn conv2d_forward(
    x: &ArrayView4<f32>,
    w: &ArrayView4<f32>,
    b: Option<&ArrayView1<f32>>,
    stride: usize,
    pad: usize,
) -> (Array4<f32>, Array2<f32>) {
    let (n, cin, h, ww) = x.dim();
    let (cout, cin_w, kh, kw) = w.dim();
    assert_eq!(cin, cin_w, "conv2d channel mismatch");
    let ho = conv_out_len(h, kh, stride, pad);
    let wo = conv_out_len(ww, kw, stride, pad);

    let cols = im2col(x, kh, kw, stride, pad);
    let w_std = w.as_standard_layout();
    let w_mat = w_std
        .to_shape((cout, cin * kh * kw))
        .expect("weight reshape");
    // (R, K) x (K, Cout) -> (R, Cout)
    let mut out_mat = cols.dot(&w_mat.t());
    if let Some(bias) = b {
        out_mat += &bias.view().insert_axis(Axis(0));
    }
    let out = out_mat
        .into_shape_with_order((n, ho, wo, cout))
        .expect("output reshape")
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .to_owned();
    (out, cols)
}

pub struct ConvGrads {
    pub dx: Array4<f32>,
    pub dw: Array4<f32>,
    pub db: Option<Array1<f32>>,
}

pub fn conv2d_backward(
    grad_out: &ArrayView4<f32>,
    cols: &Array2<f32>,
    w: &ArrayView4<f32>,
    input_shape: (usize, usize, usize, usize),
    stride: usize,
    pad: usize,
    with_bias: bool,
) -> ConvGrads {
    let (n, cout, ho, wo) = grad_out.dim();
    let (cout_w, cin, kh, kw) = w.dim();
    assert_eq!(cout, cout_w);
    let g_mat = grad_out
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .to_shape((n * ho * wo, cout))
        .expect("grad reshape")
        .to_owned();
    let w_std = w.as_standard_layout();
    let w_mat = w_std
        .to_shape((cout, cin * kh * kw))
        .expect("weight reshape");

    let dw = g_mat
        .t()
        .dot(cols)
        .into_shape_with_order((cout, cin, kh, kw))
        .expect("dw reshape");
    let db = with_bias.then(|| g_mat.sum_axis(Axis(0)));
    let d_cols = g_mat.dot(&w_mat.view());
    let dx = col2im(&d_cols, input_shape, kh, kw, stride, pad);
    ConvGrads { dx, dw, db }
}

/// Max pooling with argmax bookkeeping. `argmax` holds, per output element,
/// the flat index of the winning input element.
pub fn maxpool2d_forward(
    x: &ArrayView4<f32>,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Array4<f32>, Vec<usize>) {
    let (n, c, h, w) = x.dim();
    let ho = conv_out_len(h, k, stride, pad);
    let wo = conv_out_len(w, k, stride, pad);
    let x_std = x.as_standard_layout();
    let xs = x_std.as_slice().expect("standard layout");
    let mut out = Array4::<f32>::zeros((n, c, ho, wo));
    let os = out.as_slice_mut().expect("freshly allocated");
    let mut argmax = vec![0usize; n * c * ho * wo];

    let mut oi = 0;
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..ho {
                let iy0 = (oy * stride) as isize - pad as isize;
                for ox in 0..wo {
                    let ix0 = (ox * stride) as isize - pad as isize;
                    let mut best = f32::NEG_INFINITY;
                    let mut best_ix = 0usize;
                    for ky in 0..k {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let flat = base + iy as usize * w + ix as usize;
                            let v = xs[flat];
                            if v > best {
                                best = v;
                                best_ix = flat;
                            }
                        }
                    }
                    os[oi] = best;
                    argmax[oi] = best_ix;
                    oi += 1;
                }
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2d_backward(
    grad_out: &ArrayView4<f32>,
    argmax: &[usize],
    input_shape: (usize, usize, usize, usize),
) -> Array4<f32> {
    let mut dx = Array4::<f32>::zeros(input_shape);
    let ds = dx.as_slice_mut().expect("freshly allocated");
    let g_std = grad_out.as_standard_layout();
    let gs = g_std.as_slice().expect("standard layout");
    for (g, &ix) in gs.iter().zip(argmax) {
        ds[ix] += g;
    }
    dx
}
