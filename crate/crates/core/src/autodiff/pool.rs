//! Spatial and channel pooling kernels.

use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 2x2/stride-2 max pooling. Returns the pooled tensor and the flat
/// within-plane index of each selected element (ties pick the first in
/// row-major scan order).
pub(super) fn max_pool2<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 requires even spatial dims, got {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for ni in 0..n {
        for ci in 0..c {
            let plane = x.plane(ni, ci);
            let out = y.plane_mut(ni, ci);
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = (2 * oy) * w + 2 * ox;
                    let mut best_idx = base;
                    let mut best = plane[base];
                    for &cand in &[base + 1, base + w, base + w + 1] {
                        if plane[cand] > best {
                            best = plane[cand];
                            best_idx = cand;
                        }
                    }
                    out[oy * ow + ox] = best;
                    argmax.push(best_idx as u32);
                }
            }
        }
    }
    (y, argmax)
}

pub(super) fn max_pool2_backward<S: Scalar>(gy: &Tensor<S>, x_shape: [usize; 4], argmax: &[u32]) -> Tensor<S> {
    let [n, c, h, w] = x_shape;
    let (oh, ow) = (h / 2, w / 2);
    let mut gx = Tensor::zeros(x_shape);
    let mut k = 0;
    for ni in 0..n {
        for ci in 0..c {
            let g_in = gy.plane(ni, ci);
            let out = gx.plane_mut(ni, ci);
            for i in 0..oh * ow {
                out[argmax[k] as usize] += g_in[i];
                k += 1;
            }
        }
    }
    gx
}

pub(super) fn global_avg<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = x.shape();
    let inv = S::from_f64(1.0 / (h * w) as f64);
    Tensor::from_fn([n, c, 1, 1], |ni, ci, _, _| {
        let s: S = x.plane(ni, ci).iter().copied().sum();
        s * inv
    })
}

pub(super) fn global_avg_backward<S: Scalar>(gy: &Tensor<S>, x_shape: [usize; 4]) -> Tensor<S> {
    let [_, _, h, w] = x_shape;
    let inv = S::from_f64(1.0 / (h * w) as f64);
    Tensor::from_fn(x_shape, |ni, ci, _, _| gy.at(ni, ci, 0, 0) * inv)
}

pub(super) fn global_max<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Vec<u32>) {
    let [n, c, _, _] = x.shape();
    let mut argmax = Vec::with_capacity(n * c);
    let y = Tensor::from_fn([n, c, 1, 1], |ni, ci, _, _| {
        let plane = x.plane(ni, ci);
        let mut best = plane[0];
        let mut best_idx = 0usize;
        for (i, &v) in plane.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                best_idx = i;
            }
        }
        argmax.push(best_idx as u32);
        best
    });
    (y, argmax)
}

pub(super) fn global_max_backward<S: Scalar>(gy: &Tensor<S>, x_shape: [usize; 4], argmax: &[u32]) -> Tensor<S> {
    let [n, c, _, _] = x_shape;
    let mut gx = Tensor::zeros(x_shape);
    for ni in 0..n {
        for ci in 0..c {
            let g = gy.at(ni, ci, 0, 0);
            let plane = gx.plane_mut(ni, ci);
            plane[argmax[ni * c + ci] as usize] += g;
        }
    }
    gx
}

pub(super) fn channel_mean<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = x.shape();
    let inv = S::from_f64(1.0 / c as f64);
    Tensor::from_fn([n, 1, h, w], |ni, _, hi, wi| {
        let mut s = S::zero();
        for ci in 0..c {
            s += x.at(ni, ci, hi, wi);
        }
        s * inv
    })
}

pub(super) fn channel_mean_backward<S: Scalar>(gy: &Tensor<S>, x_shape: [usize; 4]) -> Tensor<S> {
    let [_, c, _, _] = x_shape;
    let inv = S::from_f64(1.0 / c as f64);
    Tensor::from_fn(x_shape, |ni, _, hi, wi| gy.at(ni, 0, hi, wi) * inv)
}

/// Channel-wise maximum; argmax stores the winning channel per (n, h, w).
pub(super) fn channel_max<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    let mut argmax = Vec::with_capacity(n * h * w);
    let y = Tensor::from_fn([n, 1, h, w], |ni, _, hi, wi| {
        let mut best = x.at(ni, 0, hi, wi);
        let mut best_c = 0usize;
        for ci in 1..c {
            let v = x.at(ni, ci, hi, wi);
            if v > best {
                best = v;
                best_c = ci;
            }
        }
        argmax.push(best_c as u32);
        best
    });
    (y, argmax)
}

pub(super) fn channel_max_backward<S: Scalar>(gy: &Tensor<S>, x_shape: [usize; 4], argmax: &[u32]) -> Tensor<S> {
    let [n, _, h, w] = x_shape;
    let mut gx = Tensor::zeros(x_shape);
    let mut k = 0;
    for ni in 0..n {
        for hi in 0..h {
            for wi in 0..w {
                let ci = argmax[k] as usize;
                let i = gx.idx(ni, ci, hi, wi);
                gx.data_mut()[i] += gy.at(ni, 0, hi, wi);
                k += 1;
            }
        }
    }
    gx
}
