//! 2D convolution: im2col + GEMM for dense groups, direct loops for the
//! depthwise case.

use alloc::vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Convolution hyperparameters. Padding is zero padding applied to both
/// spatial dimensions symmetrically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvCfg {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvCfg {
    fn default() -> Self {
        ConvCfg { stride: 1, pad: 0, dilation: 1, groups: 1 }
    }
}

impl ConvCfg {
    pub fn with_stride(stride: usize, pad: usize) -> Self {
        ConvCfg { stride, pad, ..Default::default() }
    }

    pub fn with_dilation(pad: usize, dilation: usize) -> Self {
        ConvCfg { stride: 1, pad, dilation, groups: 1 }
    }
}

/// Output extent along one spatial dimension.
pub fn out_extent(len: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> usize {
    let eff = dilation * (k - 1) + 1;
    assert!(
        len + 2 * pad >= eff,
        "conv input extent {len} too small for kernel {k} (dilation {dilation}, pad {pad})"
    );
    (len + 2 * pad - eff) / stride + 1
}

fn check_shapes<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, cfg: &ConvCfg) -> (usize, usize, bool) {
    let [_, c_in, h, wd] = x.shape();
    let [c_out, c_in_g, kh, kw] = w.shape();
    assert!(cfg.stride >= 1 && cfg.dilation >= 1 && cfg.groups >= 1, "conv cfg values must be >= 1");
    let depthwise = cfg.groups > 1;
    if depthwise {
        assert!(
            cfg.groups == c_in && c_out == c_in && c_in_g == 1,
            "conv groups {} unsupported: only dense (1) and depthwise (= {} input channels, weight [{c_out}, {c_in_g}, ..]) are implemented",
            cfg.groups,
            c_in
        );
    } else {
        assert_eq!(c_in_g, c_in, "conv weight expects {c_in_g} input channels, tensor has {c_in}");
    }
    let oh = out_extent(h, kh, cfg.stride, cfg.pad, cfg.dilation);
    let ow = out_extent(wd, kw, cfg.stride, cfg.pad, cfg.dilation);
    (oh, ow, depthwise)
}

/// Unfolds one batch item into a `[c_in*kh*kw, oh*ow]` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    x: &Tensor<S>,
    n: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    cfg: &ConvCfg,
    col: &mut [S],
) {
    let [_, c_in, h, w] = x.shape();
    let p = oh * ow;
    for c in 0..c_in {
        let plane = x.plane(n, c);
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * p;
                for oy in 0..oh {
                    let iy = (oy * cfg.stride + ky * cfg.dilation) as isize - cfg.pad as isize;
                    let dst = row + oy * ow;
                    if iy < 0 || iy >= h as isize {
                        col[dst..dst + ow].fill(S::zero());
                        continue;
                    }
                    let src_row = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * cfg.stride + kx * cfg.dilation) as isize - cfg.pad as isize;
                        col[dst + ox] = if ix < 0 || ix >= w as isize {
                            S::zero()
                        } else {
                            plane[src_row + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a `[c_in*kh*kw, oh*ow]` column gradient back onto the input.
#[allow(clippy::too_many_arguments)]
fn col2im_add<S: Scalar>(
    col: &[S],
    gx: &mut Tensor<S>,
    n: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    cfg: &ConvCfg,
) {
    let [_, c_in, h, w] = gx.shape();
    let p = oh * ow;
    for c in 0..c_in {
        let plane = gx.plane_mut(n, c);
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * p;
                for oy in 0..oh {
                    let iy = (oy * cfg.stride + ky * cfg.dilation) as isize - cfg.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = iy as usize * w;
                    let src = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * cfg.stride + kx * cfg.dilation) as isize - cfg.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[dst_row + ix as usize] += col[src + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(super) fn forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    cfg: &ConvCfg,
) -> Tensor<S> {
    let (oh, ow, depthwise) = check_shapes(x, w, cfg);
    let [n, c_in, _, _] = x.shape();
    let [c_out, _, kh, kw] = w.shape();
    if let Some(b) = bias {
        assert_eq!(b.shape(), [1, c_out, 1, 1], "conv bias must be [1, c_out, 1, 1]");
    }
    let mut y = Tensor::zeros([n, c_out, oh, ow]);

    if depthwise {
        depthwise_forward(x, w, cfg, &mut y);
    } else {
        let k = c_in * kh * kw;
        let p = oh * ow;
        let mut col = vec![S::zero(); k * p];
        for ni in 0..n {
            im2col(x, ni, kh, kw, oh, ow, cfg, &mut col);
            let start = ni * c_out * p;
            S::gemm(c_out, k, p, S::one(), w.data(), &col, S::zero(), &mut y.data_mut()[start..start + c_out * p]);
        }
    }

    if let Some(b) = bias {
        for ni in 0..n {
            for c in 0..c_out {
                let bv = b.data()[c];
                for v in y.plane_mut(ni, c) {
                    *v += bv;
                }
            }
        }
    }
    y
}

fn depthwise_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, cfg: &ConvCfg, y: &mut Tensor<S>) {
    let [n, c, h, wd] = x.shape();
    let [_, _, kh, kw] = w.shape();
    let [_, _, oh, ow] = y.shape();
    for ni in 0..n {
        for ci in 0..c {
            let plane = x.plane(ni, ci);
            let kernel = &w.data()[ci * kh * kw..(ci + 1) * kh * kw];
            let out = y.plane_mut(ni, ci);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = S::zero();
                    for ky in 0..kh {
                        let iy = (oy * cfg.stride + ky * cfg.dilation) as isize - cfg.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * cfg.stride + kx * cfg.dilation) as isize - cfg.pad as isize;
                            if ix >= 0 && ix < wd as isize {
                                acc += kernel[ky * kw + kx] * plane[iy as usize * wd + ix as usize];
                            }
                        }
                    }
                    out[oy * ow + ox] = acc;
                }
            }
        }
    }
}

pub(super) struct ConvGrads<S: Scalar> {
    pub gx: Option<Tensor<S>>,
    pub gw: Option<Tensor<S>>,
    pub gb: Option<Tensor<S>>,
}

pub(super) fn backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    cfg: &ConvCfg,
    gy: &Tensor<S>,
    want_gx: bool,
    want_gw: bool,
    want_gb: bool,
) -> ConvGrads<S> {
    let (oh, ow, depthwise) = check_shapes(x, w, cfg);
    let [n, c_in, _, _] = x.shape();
    let [c_out, _, kh, kw] = w.shape();
    assert_eq!(gy.shape(), [n, c_out, oh, ow], "conv backward: gradient shape mismatch");

    let mut gx = want_gx.then(|| Tensor::zeros(x.shape()));
    let mut gw = want_gw.then(|| Tensor::zeros(w.shape()));

    if depthwise {
        depthwise_backward(x, w, cfg, gy, gx.as_mut(), gw.as_mut());
    } else if want_gx || want_gw {
        let k = c_in * kh * kw;
        let p = oh * ow;
        let mut col = vec![S::zero(); k * p];
        let mut gcol = vec![S::zero(); if want_gx { k * p } else { 0 }];
        for ni in 0..n {
            let gy_n = &gy.data()[ni * c_out * p..(ni + 1) * c_out * p];
            if let Some(gw) = gw.as_mut() {
                im2col(x, ni, kh, kw, oh, ow, cfg, &mut col);
                // gw += gy_n (c_out x p) . col^T (p x k)
                S::gemm_strided(c_out, p, k, S::one(), gy_n, p as isize, 1, &col, 1, p as isize, S::one(), gw.data_mut());
            }
            if let Some(gx) = gx.as_mut() {
                // gcol = w^T (k x c_out) . gy_n (c_out x p)
                S::gemm_strided(k, c_out, p, S::one(), w.data(), 1, k as isize, gy_n, p as isize, 1, S::zero(), &mut gcol);
                col2im_add(&gcol, gx, ni, kh, kw, oh, ow, cfg);
            }
        }
    }

    let gb = want_gb.then(|| {
        let mut gb = Tensor::zeros([1, c_out, 1, 1]);
        for ni in 0..n {
            for c in 0..c_out {
                let s: S = gy.plane(ni, c).iter().copied().sum();
                gb.data_mut()[c] += s;
            }
        }
        gb
    });

    ConvGrads { gx, gw, gb }
}

fn depthwise_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    cfg: &ConvCfg,
    gy: &Tensor<S>,
    mut gx: Option<&mut Tensor<S>>,
    mut gw: Option<&mut Tensor<S>>,
) {
    let [n, c, h, wd] = x.shape();
    let [_, _, kh, kw] = w.shape();
    let [_, _, oh, ow] = gy.shape();
    for ni in 0..n {
        for ci in 0..c {
            let g_plane_start = (ni * c + ci) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gy.data()[g_plane_start + oy * ow + ox];
                    for ky in 0..kh {
                        let iy = (oy * cfg.stride + ky * cfg.dilation) as isize - cfg.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * cfg.stride + kx * cfg.dilation) as isize - cfg.pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let xi = x.idx(ni, ci, iy as usize, ix as usize);
                            if let Some(gw) = gw.as_deref_mut() {
                                let wi = (ci * kh + ky) * kw + kx;
                                gw.data_mut()[wi] += g * x.data()[xi];
                            }
                            if let Some(gx) = gx.as_deref_mut() {
                                gx.data_mut()[xi] += g * w.data()[(ci * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}
