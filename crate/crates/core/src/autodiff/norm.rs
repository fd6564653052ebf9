//! Batch normalization over the (n, h, w) extent of each channel.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Statistics source for a batch-norm application.
pub enum BnMode<'a, S> {
    /// Normalize by statistics of the current batch.
    Train,
    /// Normalize by frozen running statistics.
    Eval { mean: &'a [S], var: &'a [S] },
}

/// Per-channel batch statistics computed during a training-mode forward.
/// `var` is the biased (population) variance.
pub struct BnStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

type Forward<S> = (Tensor<S>, Vec<S>, Vec<S>, Option<BnStats<S>>, bool);

pub(super) fn forward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: S,
    mode: BnMode<'_, S>,
) -> Forward<S> {
    let [n, c, h, w] = x.shape();
    assert_eq!(gamma.shape(), [1, c, 1, 1], "batch_norm gamma must be [1, c, 1, 1]");
    assert_eq!(beta.shape(), [1, c, 1, 1], "batch_norm beta must be [1, c, 1, 1]");
    let m = n * h * w;
    assert!(m > 0, "batch_norm needs at least one sample position");

    let (mean, var, stats, train) = match mode {
        BnMode::Train => {
            let mut mean = vec![S::zero(); c];
            let mut var = vec![S::zero(); c];
            let inv_m = S::from_f64(1.0 / m as f64);
            for ci in 0..c {
                let mut s = S::zero();
                for ni in 0..n {
                    s += x.plane(ni, ci).iter().copied().sum();
                }
                mean[ci] = s * inv_m;
            }
            for ci in 0..c {
                let mu = mean[ci];
                let mut s = S::zero();
                for ni in 0..n {
                    for &v in x.plane(ni, ci) {
                        let d = v - mu;
                        s += d * d;
                    }
                }
                var[ci] = s * inv_m;
            }
            let stats = BnStats { mean: mean.clone(), var: var.clone() };
            (mean, var, Some(stats), true)
        }
        BnMode::Eval { mean, var } => {
            assert_eq!(mean.len(), c, "batch_norm running mean length mismatch");
            assert_eq!(var.len(), c, "batch_norm running var length mismatch");
            (mean.to_vec(), var.to_vec(), None, false)
        }
    };

    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let mut y = Tensor::zeros(x.shape());
    for ni in 0..n {
        for ci in 0..c {
            let g = gamma.data()[ci];
            let b = beta.data()[ci];
            let mu = mean[ci];
            let is = inv_std[ci];
            let src = x.plane(ni, ci);
            let dst = y.plane_mut(ni, ci);
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = g * (v - mu) * is + b;
            }
        }
    }
    (y, mean, inv_std, stats, train)
}

pub(super) struct BnGrads<S: Scalar> {
    pub gx: Option<Tensor<S>>,
    pub ggamma: Option<Tensor<S>>,
    pub gbeta: Option<Tensor<S>>,
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<S: Scalar>(
    g: &Tensor<S>,
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    mean: &[S],
    inv_std: &[S],
    train: bool,
    want_gx: bool,
    want_ggamma: bool,
    want_gbeta: bool,
) -> BnGrads<S> {
    let [n, c, h, w] = x.shape();
    let m = S::from_f64((n * h * w) as f64);

    // Per-channel reductions shared by all three gradients.
    let mut sum_g = vec![S::zero(); c];
    let mut sum_g_xhat = vec![S::zero(); c];
    for ci in 0..c {
        let mu = mean[ci];
        let is = inv_std[ci];
        let mut sg = S::zero();
        let mut sgx = S::zero();
        for ni in 0..n {
            for (&gv, &xv) in g.plane(ni, ci).iter().zip(x.plane(ni, ci)) {
                sg += gv;
                sgx += gv * (xv - mu) * is;
            }
        }
        sum_g[ci] = sg;
        sum_g_xhat[ci] = sgx;
    }

    let gx = want_gx.then(|| {
        let mut gx = Tensor::zeros(x.shape());
        for ni in 0..n {
            for ci in 0..c {
                let ga = gamma.data()[ci];
                let mu = mean[ci];
                let is = inv_std[ci];
                let dst = gx.plane_mut(ni, ci);
                let gsrc = g.plane(ni, ci);
                let xsrc = x.plane(ni, ci);
                if train {
                    let k1 = sum_g[ci] / m;
                    let k2 = sum_g_xhat[ci] / m;
                    for i in 0..dst.len() {
                        let xhat = (xsrc[i] - mu) * is;
                        dst[i] = ga * is * (gsrc[i] - k1 - xhat * k2);
                    }
                } else {
                    let k = ga * is;
                    for i in 0..dst.len() {
                        dst[i] = gsrc[i] * k;
                    }
                }
            }
        }
        gx
    });

    let ggamma = want_ggamma.then(|| {
        let mut t = Tensor::zeros([1, c, 1, 1]);
        t.data_mut().copy_from_slice(&sum_g_xhat);
        t
    });
    let gbeta = want_gbeta.then(|| {
        let mut t = Tensor::zeros([1, c, 1, 1]);
        t.data_mut().copy_from_slice(&sum_g);
        t
    });

    BnGrads { gx, ggamma, gbeta }
}
