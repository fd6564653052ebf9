//! Bilinear resizing with half-pixel sample centers (align_corners = false).

use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-output-sample source taps along one axis: `(i0, i1, w0, w1)` with
/// `w0 + w1 = 1`. A length-1 source broadcasts naturally (both taps clamp
/// to index 0).
pub(crate) fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64, f64)> {
    assert!(in_len > 0 && out_len > 0, "resize extents must be positive");
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let w1 = (src - i0 as f64).clamp(0.0, 1.0);
            if i0 == i1 {
                // Both taps clamp to one sample: fold the weights so the
                // value is copied instead of recombined with rounding.
                (i0, i1, 1.0, 0.0)
            } else {
                (i0, i1, 1.0 - w1, w1)
            }
        })
        .collect()
}

pub(super) fn forward<S: Scalar>(x: &Tensor<S>, out_h: usize, out_w: usize) -> Tensor<S> {
    let [n, c, h, w] = x.shape();
    if (out_h, out_w) == (h, w) {
        return x.clone();
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut y = Tensor::zeros([n, c, out_h, out_w]);
    for ni in 0..n {
        for ci in 0..c {
            let src = x.plane(ni, ci);
            let dst = y.plane_mut(ni, ci);
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                let r0 = y0 * w;
                let r1 = y1 * w;
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let top = src[r0 + x0].as_f64() * wx0 + src[r0 + x1].as_f64() * wx1;
                    let bot = src[r1 + x0].as_f64() * wx0 + src[r1 + x1].as_f64() * wx1;
                    dst[oy * out_w + ox] = S::from_f64(top * wy0 + bot * wy1);
                }
            }
        }
    }
    y
}

pub(super) fn backward<S: Scalar>(gy: &Tensor<S>, x_shape: [usize; 4]) -> Tensor<S> {
    let [n, c, h, w] = x_shape;
    let [_, _, oh, ow] = gy.shape();
    if (oh, ow) == (h, w) {
        return gy.clone();
    }
    let ty = axis_taps(h, oh);
    let tx = axis_taps(w, ow);
    let mut gx = Tensor::zeros(x_shape);
    for ni in 0..n {
        for ci in 0..c {
            let src = gy.plane(ni, ci);
            let dst = gx.plane_mut(ni, ci);
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let g = src[oy * ow + ox].as_f64();
                    dst[y0 * w + x0] += S::from_f64(g * wy0 * wx0);
                    dst[y0 * w + x1] += S::from_f64(g * wy0 * wx1);
                    dst[y1 * w + x0] += S::from_f64(g * wy1 * wx0);
                    dst[y1 * w + x1] += S::from_f64(g * wy1 * wx1);
                }
            }
        }
    }
    gx
}
