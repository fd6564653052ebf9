//! Pointwise nonlinearities, broadcasting arithmetic, channel concatenation
//! and reflection padding.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(super) fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

pub(super) fn relu_backward<S: Scalar>(x: &Tensor<S>, g: &Tensor<S>) -> Tensor<S> {
    let mut gx = g.clone();
    for (gv, &xv) in gx.data_mut().iter_mut().zip(x.data()) {
        if xv <= S::zero() {
            *gv = S::zero();
        }
    }
    gx
}

pub(super) fn sigmoid<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| {
        if v >= S::zero() {
            S::one() / (S::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (S::one() + e)
        }
    })
}

/// Backward from the sigmoid output: `g * y * (1 - y)`.
pub(super) fn sigmoid_backward<S: Scalar>(y: &Tensor<S>, g: &Tensor<S>) -> Tensor<S> {
    let mut gx = g.clone();
    for (gv, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
        *gv = *gv * yv * (S::one() - yv);
    }
    gx
}

/// Shape of a broadcast binary op: each dimension must match or be 1 on
/// exactly one side.
fn broadcast_shape(a: [usize; 4], b: [usize; 4]) -> [usize; 4] {
    let mut out = [0; 4];
    for d in 0..4 {
        out[d] = if a[d] == b[d] {
            a[d]
        } else if a[d] == 1 {
            b[d]
        } else if b[d] == 1 {
            a[d]
        } else {
            panic!("broadcast mismatch at dim {d}: {a:?} vs {b:?}");
        };
    }
    out
}

#[inline]
fn strides_for(shape: [usize; 4], out: [usize; 4]) -> [usize; 4] {
    // Stride 0 where the operand broadcasts along a dimension.
    let mut st = [0; 4];
    let mut acc = 1;
    for d in (0..4).rev() {
        st[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    st
}

pub(super) fn broadcast_zip<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let out = broadcast_shape(a.shape(), b.shape());
    let sa = strides_for(a.shape(), out);
    let sb = strides_for(b.shape(), out);
    let (ad, bd) = (a.data(), b.data());
    let mut y = Tensor::zeros(out);
    let yd = y.data_mut();
    let mut i = 0;
    for n in 0..out[0] {
        for c in 0..out[1] {
            for h in 0..out[2] {
                let base_a = n * sa[0] + c * sa[1] + h * sa[2];
                let base_b = n * sb[0] + c * sb[1] + h * sb[2];
                for w in 0..out[3] {
                    yd[i] = f(ad[base_a + w * sa[3]], bd[base_b + w * sb[3]]);
                    i += 1;
                }
            }
        }
    }
    y
}

/// Sums `g` down to `target` shape over the dimensions `target` broadcasts
/// along. Used by the backward pass of broadcast binary ops.
pub(super) fn reduce_to<S: Scalar>(g: &Tensor<S>, target: [usize; 4]) -> Tensor<S> {
    if g.shape() == target {
        return g.clone();
    }
    let out = g.shape();
    let st = strides_for(target, out);
    let mut r = Tensor::zeros(target);
    let rd = r.data_mut();
    let gd = g.data();
    let mut i = 0;
    for n in 0..out[0] {
        for c in 0..out[1] {
            for h in 0..out[2] {
                let base = n * st[0] + c * st[1] + h * st[2];
                for w in 0..out[3] {
                    rd[base + w * st[3]] += gd[i];
                    i += 1;
                }
            }
        }
    }
    r
}

/// Gradient of a broadcast product for the operand with shape `target`:
/// reduce_to(g * other, target) computed in one pass.
pub(super) fn mul_backward_into<S: Scalar>(g: &Tensor<S>, other: &Tensor<S>, target: [usize; 4]) -> Tensor<S> {
    let out = g.shape();
    let st = strides_for(target, out);
    let so = strides_for(other.shape(), out);
    let mut r = Tensor::zeros(target);
    let rd = r.data_mut();
    let gd = g.data();
    let od = other.data();
    let mut i = 0;
    for n in 0..out[0] {
        for c in 0..out[1] {
            for h in 0..out[2] {
                let base_t = n * st[0] + c * st[1] + h * st[2];
                let base_o = n * so[0] + c * so[1] + h * so[2];
                for w in 0..out[3] {
                    rd[base_t + w * st[3]] += gd[i] * od[base_o + w * so[3]];
                    i += 1;
                }
            }
        }
    }
    r
}

pub(super) fn div_backward<S: Scalar>(
    g: &Tensor<S>,
    a: &Tensor<S>,
    b: &Tensor<S>,
    want_ga: bool,
    want_gb: bool,
) -> (Option<Tensor<S>>, Option<Tensor<S>>) {
    let out = g.shape();
    let sa = strides_for(a.shape(), out);
    let sb = strides_for(b.shape(), out);
    let mut ga = want_ga.then(|| Tensor::zeros(a.shape()));
    let mut gb = want_gb.then(|| Tensor::zeros(b.shape()));
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let mut i = 0;
    for n in 0..out[0] {
        for c in 0..out[1] {
            for h in 0..out[2] {
                let base_a = n * sa[0] + c * sa[1] + h * sa[2];
                let base_b = n * sb[0] + c * sb[1] + h * sb[2];
                for w in 0..out[3] {
                    let ia = base_a + w * sa[3];
                    let ib = base_b + w * sb[3];
                    let bv = bd[ib];
                    if let Some(ga) = ga.as_mut() {
                        ga.data_mut()[ia] += gd[i] / bv;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb.data_mut()[ib] -= gd[i] * ad[ia] / (bv * bv);
                    }
                    i += 1;
                }
            }
        }
    }
    (ga, gb)
}

pub(super) fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    assert_eq!((n, h, w), (nb, hb, wb), "concat_channels: non-channel dims must match");
    let mut y = Tensor::zeros([n, ca + cb, h, w]);
    for ni in 0..n {
        for ci in 0..ca {
            y.plane_mut(ni, ci).copy_from_slice(a.plane(ni, ci));
        }
        for ci in 0..cb {
            y.plane_mut(ni, ca + ci).copy_from_slice(b.plane(ni, ci));
        }
    }
    y
}

pub(super) fn concat_channels_backward<S: Scalar>(
    g: &Tensor<S>,
    a_shape: [usize; 4],
    b_shape: [usize; 4],
) -> (Tensor<S>, Tensor<S>) {
    let [n, ca, _, _] = a_shape;
    let cb = b_shape[1];
    let mut ga = Tensor::zeros(a_shape);
    let mut gb = Tensor::zeros(b_shape);
    for ni in 0..n {
        for ci in 0..ca {
            ga.plane_mut(ni, ci).copy_from_slice(g.plane(ni, ci));
        }
        for ci in 0..cb {
            gb.plane_mut(ni, ci).copy_from_slice(g.plane(ni, ca + ci));
        }
    }
    (ga, gb)
}

#[inline]
fn reflect(i: isize, len: usize) -> usize {
    // Reflection without repeating the edge sample; valid for |i| <= len-1
    // beyond either end.
    if i < 0 {
        (-i) as usize
    } else if i as usize >= len {
        2 * len - 2 - i as usize
    } else {
        i as usize
    }
}

pub(super) fn pad_reflect<S: Scalar>(x: &Tensor<S>, pad: usize) -> Tensor<S> {
    let [n, c, h, w] = x.shape();
    assert!(pad < h && pad < w, "reflection pad {pad} needs spatial dims > pad, got {h}x{w}");
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for ni in 0..n {
        for ci in 0..c {
            let src = x.plane(ni, ci);
            let dst = y.plane_mut(ni, ci);
            for oy in 0..oh {
                let iy = reflect(oy as isize - pad as isize, h);
                for ox in 0..ow {
                    let ix = reflect(ox as isize - pad as isize, w);
                    dst[oy * ow + ox] = src[iy * w + ix];
                }
            }
        }
    }
    y
}

pub(super) fn pad_reflect_backward<S: Scalar>(g: &Tensor<S>, x_shape: [usize; 4], pad: usize) -> Tensor<S> {
    let [n, c, h, w] = x_shape;
    let [_, _, oh, ow] = g.shape();
    let mut gx = Tensor::zeros(x_shape);
    for ni in 0..n {
        for ci in 0..c {
            let src = g.plane(ni, ci);
            let dst = gx.plane_mut(ni, ci);
            for oy in 0..oh {
                let iy = reflect(oy as isize - pad as isize, h);
                for ox in 0..ow {
                    let ix = reflect(ox as isize - pad as isize, w);
                    dst[iy * w + ix] += src[oy * ow + ox];
                }
            }
        }
    }
    gx
}
