//! Dense numeric kernels: zero-padded convolutions (with exact adjoints),
//! average pooling, bilinear resampling, and finite-difference stencils.
//!
//! Convolutions use the correlation convention
//! `y[o, p] = Σ_{c,q} k[o, c, q] · x[c, p + q - off]` with `off = (len-1)/2`
//! per spatial axis (odd kernels only), reading 0 outside the domain. They are
//! evaluated as im2col + GEMM. The `*_x_vjp` / `*_k_vjp` companions are the
//! exact transposes used by reverse-mode differentiation:
//!
//! * `x_vjp(g, k)  = Σ_{o,q} k[o, c, q] · g[o, s - q + off]`, which equals a
//!   forward convolution with the channel-transposed, axis-flipped kernel;
//! * `k_vjp(x, g)[o, c, q] = Σ_p g[o, p] · x[c, p + q - off]`, a single GEMM
//!   against the im2col matrix.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4, ArrayView5, Axis};

/// Per-output-index interpolation weights for center-aligned bilinear
/// resampling with edge clamping: source coordinate `u = (o + 0.5) * n_in /
/// n_out - 0.5`.
pub fn bilinear_weights(n_out: usize, n_in: usize) -> Vec<(usize, f64, usize, f64)> {
    assert!(n_out > 0 && n_in > 0);
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let u = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = u.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            let w1 = u - i0 as f64;
            (i0, 1.0 - w1, i1, w1)
        })
        .collect()
}

fn im2col_2d(x: &ArrayView3<f64>, kh: usize, kw: usize) -> Array2<f64> {
    let (ci, h, w) = x.dim();
    let (oh, ow) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut cols = Array2::zeros((ci * kh * kw, h * w));
    for c in 0..ci {
        for u in 0..kh {
            let di = u as isize - oh as isize;
            for v in 0..kw {
                let dj = v as isize - ow as isize;
                let row = (c * kh + u) * kw + v;
                let mut row_view = cols.row_mut(row);
                for i in 0..h {
                    let si = i as isize + di;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for j in 0..w {
                        let sj = j as isize + dj;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        row_view[i * w + j] = x[[c, si as usize, sj as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Zero-padded 2-d convolution: `x (Ci,H,W)`, `k (Co,Ci,kh,kw)` → `(Co,H,W)`.
pub fn conv2d(x: &ArrayView3<f64>, k: &ArrayView4<f64>) -> Array3<f64> {
    let (ci, h, w) = x.dim();
    let (co, kci, kh, kw) = k.dim();
    assert_eq!(ci, kci, "conv2d channel mismatch");
    assert!(kh % 2 == 1 && kw % 2 == 1, "conv2d kernels must be odd");
    let cols = im2col_2d(x, kh, kw);
    let kmat = k
        .to_owned()
        .into_shape_with_order((co, ci * kh * kw))
        .expect("kernel is contiguous");
    let y = kmat.dot(&cols);
    y.into_shape_with_order((co, h, w)).expect("output shape")
}

/// Gradient of `conv2d` w.r.t. its input. Equals a forward convolution of `g`
/// with the channel-transposed, flipped kernel.
pub fn conv2d_x_vjp(g: &ArrayView3<f64>, k: &ArrayView4<f64>) -> Array3<f64> {
    let (co, ci, kh, kw) = k.dim();
    let mut kt = Array4::zeros((ci, co, kh, kw));
    for o in 0..co {
        for c in 0..ci {
            for u in 0..kh {
                for v in 0..kw {
                    kt[[c, o, kh - 1 - u, kw - 1 - v]] = k[[o, c, u, v]];
                }
            }
        }
    }
    conv2d(g, &kt.view())
}

/// Gradient of `conv2d` w.r.t. the kernel.
pub fn conv2d_k_vjp(x: &ArrayView3<f64>, g: &ArrayView3<f64>, kh: usize, kw: usize) -> Array4<f64> {
    let (ci, h, w) = x.dim();
    let (co, gh, gw) = g.dim();
    assert_eq!((gh, gw), (h, w), "conv2d_k_vjp spatial mismatch");
    let cols = im2col_2d(x, kh, kw);
    let gmat = g
        .to_owned()
        .into_shape_with_order((co, h * w))
        .expect("cotangent is contiguous");
    let dk = gmat.dot(&cols.t());
    dk.into_shape_with_order((co, ci, kh, kw)).expect("kernel shape")
}

fn im2col_3d(x: &ArrayView4<f64>, kt: usize, kh: usize, kw: usize) -> Array2<f64> {
    let (ci, t, h, w) = x.dim();
    let (ot, oh, ow) = ((kt - 1) / 2, (kh - 1) / 2, (kw - 1) / 2);
    let mut cols = Array2::zeros((ci * kt * kh * kw, t * h * w));
    for c in 0..ci {
        for r in 0..kt {
            let dt = r as isize - ot as isize;
            for u in 0..kh {
                let di = u as isize - oh as isize;
                for v in 0..kw {
                    let dj = v as isize - ow as isize;
                    let row = ((c * kt + r) * kh + u) * kw + v;
                    let mut row_view = cols.row_mut(row);
                    for s in 0..t {
                        let st = s as isize + dt;
                        if st < 0 || st >= t as isize {
                            continue;
                        }
                        for i in 0..h {
                            let si = i as isize + di;
                            if si < 0 || si >= h as isize {
                                continue;
                            }
                            for j in 0..w {
                                let sj = j as isize + dj;
                                if sj < 0 || sj >= w as isize {
                                    continue;
                                }
                                row_view[(s * h + i) * w + j] = x[[c, st as usize, si as usize, sj as usize]];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Zero-padded space-time convolution: `x (Ci,T,H,W)`, `k (Co,Ci,kt,kh,kw)` →
/// `(Co,T,H,W)`.
pub fn conv3d(x: &ArrayView4<f64>, k: &ArrayView5<f64>) -> Array4<f64> {
    let (ci, t, h, w) = x.dim();
    let (co, kci, kt, kh, kw) = k.dim();
    assert_eq!(ci, kci, "conv3d channel mismatch");
    assert!(kt % 2 == 1 && kh % 2 == 1 && kw % 2 == 1, "conv3d kernels must be odd");
    let cols = im2col_3d(x, kt, kh, kw);
    let kmat = k
        .to_owned()
        .into_shape_with_order((co, kci * kt * kh * kw))
        .expect("kernel is contiguous");
    let y = kmat.dot(&cols);
    y.into_shape_with_order((co, t, h, w)).expect("output shape")
}

/// Gradient of `conv3d` w.r.t. its input.
pub fn conv3d_x_vjp(g: &ArrayView4<f64>, k: &ArrayView5<f64>) -> Array4<f64> {
    let (co, ci, kt, kh, kw) = k.dim();
    let mut ktr = ndarray::Array5::zeros((ci, co, kt, kh, kw));
    for o in 0..co {
        for c in 0..ci {
            for r in 0..kt {
                for u in 0..kh {
                    for v in 0..kw {
                        ktr[[c, o, kt - 1 - r, kh - 1 - u, kw - 1 - v]] = k[[o, c, r, u, v]];
                    }
                }
            }
        }
    }
    conv3d(g, &ktr.view())
}

/// Gradient of `conv3d` w.r.t. the kernel.
pub fn conv3d_k_vjp(
    x: &ArrayView4<f64>,
    g: &ArrayView4<f64>,
    kt: usize,
    kh: usize,
    kw: usize,
) -> ndarray::Array5<f64> {
    let (ci, t, h, w) = x.dim();
    let (co, gt, gh, gw) = g.dim();
    assert_eq!((gt, gh, gw), (t, h, w), "conv3d_k_vjp shape mismatch");
    let cols = im2col_3d(x, kt, kh, kw);
    let gmat = g
        .to_owned()
        .into_shape_with_order((co, t * h * w))
        .expect("cotangent is contiguous");
    let dk = gmat.dot(&cols.t());
    dk.into_shape_with_order((co, ci, kt, kh, kw)).expect("kernel shape")
}

/// 2×2 average pooling over the trailing two axes of `(C,H,W)`.
pub fn avg_pool2(x: &ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even H, W");
    let mut y = Array3::zeros((c, h / 2, w / 2));
    for ch in 0..c {
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                y[[ch, i, j]] = 0.25
                    * (x[[ch, 2 * i, 2 * j]]
                        + x[[ch, 2 * i, 2 * j + 1]]
                        + x[[ch, 2 * i + 1, 2 * j]]
                        + x[[ch, 2 * i + 1, 2 * j + 1]]);
            }
        }
    }
    y
}

/// Adjoint of [`avg_pool2`]: spreads each coarse value at weight 1/4.
pub fn avg_pool2_t(g: &ArrayView3<f64>) -> Array3<f64> {
    let (c, hh, hw) = g.dim();
    let mut y = Array3::zeros((c, hh * 2, hw * 2));
    for ch in 0..c {
        for i in 0..hh {
            for j in 0..hw {
                let v = 0.25 * g[[ch, i, j]];
                y[[ch, 2 * i, 2 * j]] = v;
                y[[ch, 2 * i, 2 * j + 1]] = v;
                y[[ch, 2 * i + 1, 2 * j]] = v;
                y[[ch, 2 * i + 1, 2 * j + 1]] = v;
            }
        }
    }
    y
}

/// Center-aligned bilinear resize of one frame.
pub fn bilinear_resize_frame(x: &ArrayView2<f64>, h_out: usize, w_out: usize) -> Array2<f64> {
    let (h_in, w_in) = x.dim();
    let wy = bilinear_weights(h_out, h_in);
    let wx = bilinear_weights(w_out, w_in);
    // Rows first, then columns (separable).
    let mut tmp = Array2::zeros((h_out, w_in));
    for (i, &(i0, a0, i1, a1)) in wy.iter().enumerate() {
        for j in 0..w_in {
            tmp[[i, j]] = a0 * x[[i0, j]] + a1 * x[[i1, j]];
        }
    }
    let mut y = Array2::zeros((h_out, w_out));
    for i in 0..h_out {
        for (j, &(j0, b0, j1, b1)) in wx.iter().enumerate() {
            y[[i, j]] = b0 * tmp[[i, j0]] + b1 * tmp[[i, j1]];
        }
    }
    y
}

/// Adjoint of [`bilinear_resize_frame`] for fixed input size.
pub fn bilinear_resize_frame_t(g: &ArrayView2<f64>, h_in: usize, w_in: usize) -> Array2<f64> {
    let (h_out, w_out) = g.dim();
    let wy = bilinear_weights(h_out, h_in);
    let wx = bilinear_weights(w_out, w_in);
    let mut tmp: Array2<f64> = Array2::zeros((h_out, w_in));
    for i in 0..h_out {
        for (j, &(j0, b0, j1, b1)) in wx.iter().enumerate() {
            tmp[[i, j0]] += b0 * g[[i, j]];
            tmp[[i, j1]] += b1 * g[[i, j]];
        }
    }
    let mut y = Array2::zeros((h_in, w_in));
    for (i, &(i0, a0, i1, a1)) in wy.iter().enumerate() {
        for j in 0..w_in {
            y[[i0, j]] += a0 * tmp[[i, j]];
            y[[i1, j]] += a1 * tmp[[i, j]];
        }
    }
    y
}

/// Doubles the trailing two axes of `(C,h,w)` by bilinear interpolation.
pub fn up_bilinear2(x: &ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, 2 * h, 2 * w));
    for ch in 0..c {
        y.index_axis_mut(Axis(0), ch)
            .assign(&bilinear_resize_frame(&x.index_axis(Axis(0), ch), 2 * h, 2 * w));
    }
    y
}

/// Adjoint of [`up_bilinear2`].
pub fn up_bilinear2_t(g: &ArrayView3<f64>) -> Array3<f64> {
    let (c, hh, hw) = g.dim();
    assert!(hh % 2 == 0 && hw % 2 == 0);
    let (h, w) = (hh / 2, hw / 2);
    let mut y = Array3::zeros((c, h, w));
    for ch in 0..c {
        y.index_axis_mut(Axis(0), ch)
            .assign(&bilinear_resize_frame_t(&g.index_axis(Axis(0), ch), h, w));
    }
    y
}

/// Block average over `factor × factor` cells of one frame.
pub fn avg_pool_frame(x: &ArrayView2<f64>, factor: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    assert!(factor >= 1 && h % factor == 0 && w % factor == 0, "pool factor must divide frame");
    let mut y = Array2::zeros((h / factor, w / factor));
    let norm = 1.0 / (factor * factor) as f64;
    for i in 0..h / factor {
        for j in 0..w / factor {
            let block = x.slice(s![i * factor..(i + 1) * factor, j * factor..(j + 1) * factor]);
            y[[i, j]] = block.sum() * norm;
        }
    }
    y
}

/// 1-d stencil kinds applied along an axis of `(C,H,W)`.
#[derive(Clone, Copy)]
enum StencilAxis {
    Rows,
    Cols,
}

fn centered_diff_axis(x: &ArrayView3<f64>, axis: StencilAxis) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, h, w));
    let n = match axis {
        StencilAxis::Rows => h,
        StencilAxis::Cols => w,
    };
    if n < 2 {
        return y;
    }
    let get = |ch: usize, i: usize, j: usize, l: usize| match axis {
        StencilAxis::Rows => x[[ch, l, j]],
        StencilAxis::Cols => x[[ch, i, l]],
    };
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let l = match axis {
                    StencilAxis::Rows => i,
                    StencilAxis::Cols => j,
                };
                y[[ch, i, j]] = if l == 0 {
                    get(ch, i, j, 1) - get(ch, i, j, 0)
                } else if l == n - 1 {
                    get(ch, i, j, n - 1) - get(ch, i, j, n - 2)
                } else {
                    0.5 * (get(ch, i, j, l + 1) - get(ch, i, j, l - 1))
                };
            }
        }
    }
    y
}

fn centered_diff_axis_t(g: &ArrayView3<f64>, axis: StencilAxis) -> Array3<f64> {
    let (c, h, w) = g.dim();
    let mut y = Array3::zeros((c, h, w));
    let n = match axis {
        StencilAxis::Rows => h,
        StencilAxis::Cols => w,
    };
    if n < 2 {
        return y;
    }
    let mut add = |ch: usize, i: usize, j: usize, l: usize, v: f64| match axis {
        StencilAxis::Rows => y[[ch, l, j]] += v,
        StencilAxis::Cols => y[[ch, i, l]] += v,
    };
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let l = match axis {
                    StencilAxis::Rows => i,
                    StencilAxis::Cols => j,
                };
                let gv = g[[ch, i, j]];
                if l == 0 {
                    add(ch, i, j, 1, gv);
                    add(ch, i, j, 0, -gv);
                } else if l == n - 1 {
                    add(ch, i, j, n - 1, gv);
                    add(ch, i, j, n - 2, -gv);
                } else {
                    add(ch, i, j, l + 1, 0.5 * gv);
                    add(ch, i, j, l - 1, -0.5 * gv);
                }
            }
        }
    }
    y
}

/// Row-direction finite difference (centered inside, one-sided at edges),
/// in cell units, applied per channel.
pub fn grad_y(x: &ArrayView3<f64>) -> Array3<f64> {
    centered_diff_axis(x, StencilAxis::Rows)
}

/// Adjoint of [`grad_y`].
pub fn grad_y_t(g: &ArrayView3<f64>) -> Array3<f64> {
    centered_diff_axis_t(g, StencilAxis::Rows)
}

/// Column-direction finite difference, in cell units, per channel.
pub fn grad_x(x: &ArrayView3<f64>) -> Array3<f64> {
    centered_diff_axis(x, StencilAxis::Cols)
}

/// Adjoint of [`grad_x`].
pub fn grad_x_t(g: &ArrayView3<f64>) -> Array3<f64> {
    centered_diff_axis_t(g, StencilAxis::Cols)
}

/// 5-point discrete Laplacian per channel, counting only in-domain neighbors
/// (replicate boundary). The resulting linear map is symmetric, and constants
/// are in its null space.
pub fn laplacian5(x: &ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, h, w));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let center = x[[ch, i, j]];
                let mut acc = 0.0;
                if i > 0 {
                    acc += x[[ch, i - 1, j]] - center;
                }
                if i + 1 < h {
                    acc += x[[ch, i + 1, j]] - center;
                }
                if j > 0 {
                    acc += x[[ch, i, j - 1]] - center;
                }
                if j + 1 < w {
                    acc += x[[ch, i, j + 1]] - center;
                }
                y[[ch, i, j]] = acc;
            }
        }
    }
    y
}

/// Per-channel sum over the trailing axes: `(C, ...)` → `(C,)`.
pub fn sum_trailing(x: &ndarray::ArrayViewD<f64>) -> Array1<f64> {
    let c = x.shape()[0];
    let mut y = Array1::zeros(c);
    for ch in 0..c {
        y[ch] = x.index_axis(Axis(0), ch).sum();
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array4, Array5};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(1234)
    }

    fn rand3(r: &mut ChaCha12Rng, d: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(d, |_| r.gen_range(-1.0..1.0))
    }

    fn conv2d_direct(x: &ArrayView3<f64>, k: &ArrayView4<f64>) -> Array3<f64> {
        let (ci, h, w) = x.dim();
        let (co, _, kh, kw) = k.dim();
        let (oh, ow) = ((kh as isize - 1) / 2, (kw as isize - 1) / 2);
        let mut y = Array3::zeros((co, h, w));
        for o in 0..co {
            for i in 0..h as isize {
                for j in 0..w as isize {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for u in 0..kh as isize {
                            for v in 0..kw as isize {
                                let (si, sj) = (i + u - oh, j + v - ow);
                                if si >= 0 && si < h as isize && sj >= 0 && sj < w as isize {
                                    acc += k[[o, c, u as usize, v as usize]] * x[[c, si as usize, sj as usize]];
                                }
                            }
                        }
                    }
                    y[[o, i as usize, j as usize]] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv2d_matches_direct_loops() {
        let mut r = rng();
        let x = rand3(&mut r, (3, 6, 7));
        let k = Array4::from_shape_fn((2, 3, 3, 5), |_| r.gen_range(-1.0..1.0));
        let fast = conv2d(&x.view(), &k.view());
        let slow = conv2d_direct(&x.view(), &k.view());
        assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
    }

    #[test]
    fn conv2d_identity_kernel_passes_through() {
        let mut r = rng();
        let x = rand3(&mut r, (2, 5, 5));
        let mut k = Array4::zeros((2, 2, 3, 3));
        k[[0, 0, 1, 1]] = 1.0;
        k[[1, 1, 1, 1]] = 1.0;
        let y = conv2d(&x.view(), &k.view());
        assert_abs_diff_eq!(y, x, epsilon = 1e-15);
    }

    #[test]
    fn conv2d_adjoints_satisfy_inner_product_identities() {
        let mut r = rng();
        let x = rand3(&mut r, (2, 6, 6));
        let k = Array4::from_shape_fn((3, 2, 3, 3), |_| r.gen_range(-1.0..1.0));
        let g = rand3(&mut r, (3, 6, 6));
        let y = conv2d(&x.view(), &k.view());
        let lhs: f64 = (&y * &g).sum();
        let dx = conv2d_x_vjp(&g.view(), &k.view());
        let rhs_x: f64 = (&dx * &x).sum();
        assert_abs_diff_eq!(lhs, rhs_x, epsilon = 1e-10);
        let dk = conv2d_k_vjp(&x.view(), &g.view(), 3, 3);
        let rhs_k: f64 = (&dk * &k).sum();
        assert_abs_diff_eq!(lhs, rhs_k, epsilon = 1e-10);
    }

    #[test]
    fn conv3d_matches_direct_loops_and_adjoints() {
        let mut r = rng();
        let x = Array4::from_shape_fn((1, 5, 4, 4), |_| r.gen_range(-1.0..1.0));
        let k = Array5::from_shape_fn((2, 1, 3, 3, 3), |_| r.gen_range(-1.0..1.0));
        let y = conv3d(&x.view(), &k.view());

        let (oh, t, h, w) = (2usize, 5usize, 4usize, 4usize);
        let mut slow = Array4::zeros((oh, t, h, w));
        for o in 0..oh {
            for s in 0..t as isize {
                for i in 0..h as isize {
                    for j in 0..w as isize {
                        let mut acc = 0.0;
                        for rr in 0..3isize {
                            for u in 0..3isize {
                                for v in 0..3isize {
                                    let (ss, si, sj) = (s + rr - 1, i + u - 1, j + v - 1);
                                    if ss >= 0
                                        && ss < t as isize
                                        && si >= 0
                                        && si < h as isize
                                        && sj >= 0
                                        && sj < w as isize
                                    {
                                        acc += k[[o, 0, rr as usize, u as usize, v as usize]]
                                            * x[[0, ss as usize, si as usize, sj as usize]];
                                    }
                                }
                            }
                        }
                        slow[[o, s as usize, i as usize, j as usize]] = acc;
                    }
                }
            }
        }
        assert_abs_diff_eq!(y, slow, epsilon = 1e-12);

        let g = Array4::from_shape_fn((2, 5, 4, 4), |_| r.gen_range(-1.0..1.0));
        let lhs: f64 = (&y * &g).sum();
        let dx = conv3d_x_vjp(&g.view(), &k.view());
        assert_abs_diff_eq!(lhs, (&dx * &x).sum(), epsilon = 1e-10);
        let dk = conv3d_k_vjp(&x.view(), &g.view(), 3, 3, 3);
        assert_abs_diff_eq!(lhs, (&dk * &k).sum(), epsilon = 1e-10);
    }

    #[test]
    fn pooling_and_bilinear_are_adjoint_pairs() {
        let mut r = rng();
        let x = rand3(&mut r, (2, 8, 8));
        let g = rand3(&mut r, (2, 4, 4));
        let lhs: f64 = (&avg_pool2(&x.view()) * &g).sum();
        let rhs: f64 = (&avg_pool2_t(&g.view()) * &x).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);

        let x = rand3(&mut r, (2, 4, 4));
        let g = rand3(&mut r, (2, 8, 8));
        let lhs: f64 = (&up_bilinear2(&x.view()) * &g).sum();
        let rhs: f64 = (&up_bilinear2_t(&g.view()) * &x).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn bilinear_upsample_preserves_mean_on_divisible_grids() {
        let mut r = rng();
        for f in [2usize, 4] {
            let coarse = Array2::from_shape_fn((16 / f, 16 / f), |_| r.gen_range(-1.0..1.0));
            let fine = bilinear_resize_frame(&coarse.view(), 16, 16);
            let mean_c = coarse.sum() / coarse.len() as f64;
            let mean_f = fine.sum() / fine.len() as f64;
            assert_abs_diff_eq!(mean_c, mean_f, epsilon = 1e-12);
        }
    }

    #[test]
    fn avg_pool_frame_factor_one_is_identity() {
        let mut r = rng();
        let x = Array2::from_shape_fn((6, 6), |_| r.gen_range(-1.0..1.0));
        assert_eq!(avg_pool_frame(&x.view(), 1), x);
    }

    #[test]
    fn gradient_stencils_are_adjoint_and_exact_on_linear_fields() {
        let mut r = rng();
        let x = rand3(&mut r, (2, 7, 6));
        let g = rand3(&mut r, (2, 7, 6));
        for (fwd, adj) in [
            (grad_y as fn(&ArrayView3<f64>) -> Array3<f64>, grad_y_t as fn(&ArrayView3<f64>) -> Array3<f64>),
            (grad_x, grad_x_t),
        ] {
            let lhs: f64 = (&fwd(&x.view()) * &g).sum();
            let rhs: f64 = (&adj(&g.view()) * &x).sum();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }

        let ramp = Array3::from_shape_fn((1, 5, 5), |(_, i, j)| 2.0 * i as f64 + 3.0 * j as f64);
        let dy = grad_y(&ramp.view());
        let dx = grad_x(&ramp.view());
        for v in dy.iter() {
            assert_abs_diff_eq!(*v, 2.0, epsilon = 1e-12);
        }
        for v in dx.iter() {
            assert_abs_diff_eq!(*v, 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn laplacian_is_symmetric_and_kills_constants() {
        let mut r = rng();
        let x = rand3(&mut r, (1, 6, 6));
        let y = rand3(&mut r, (1, 6, 6));
        let lhs: f64 = (&laplacian5(&x.view()) * &y).sum();
        let rhs: f64 = (&laplacian5(&y.view()) * &x).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);

        let c = Array3::from_elem((1, 6, 6), 3.7);
        let lap = laplacian5(&c.view());
        for v in lap.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-14);
        }
    }
}
