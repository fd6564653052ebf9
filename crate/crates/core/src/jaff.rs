//! Joint attention-guided feature fusion.
//!
//! High-level decoder features steer the matching encoder features through
//! two attention branches: a channel branch pooled over space and a spatial
//! branch pooled over channels. Their outer product, refined by a depthwise
//! separable dilated convolution, becomes a joint map M that reweights the
//! low-level features before the two streams are concatenated.

use alloc::format;

use rand::Rng;

use crate::autodiff::{ConvCfg, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One fusion module: attention branches for a (low, high) feature pair
/// plus the learnable guidance strength alpha.
pub struct JaffModule {
    ca_reduce: Conv2d,
    ca_avg: Conv2d,
    ca_max: Conv2d,
    ca_shared: Conv2d,
    sa_reduce: Conv2d,
    sa_conv1: Conv2d,
    sa_conv2: Conv2d,
    fuse_dw: Conv2d,
    fuse_pw: Conv2d,
    /// Guidance strength of Eq. 4; zero-initialized so fusion starts as a
    /// plain concatenation.
    pub alpha: ParamId,
    pub low_channels: usize,
    pub high_channels: usize,
}

impl JaffModule {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamSet<S>,
        rng: &mut R,
        name: &str,
        low_channels: usize,
        high_channels: usize,
    ) -> Self {
        let one = ConvCfg::default();
        let d2 = ConvCfg { pad: 2, dilation: 2, ..ConvCfg::default() };
        let d4 = ConvCfg { pad: 4, dilation: 4, ..ConvCfg::default() };
        let dw = ConvCfg { pad: 2, dilation: 2, groups: low_channels, ..ConvCfg::default() };
        let ca_reduce = Conv2d::new(store, rng, &format!("{name}.ca_reduce"), high_channels, low_channels, 1, one, true);
        let ca_avg = Conv2d::new(store, rng, &format!("{name}.ca_avg"), low_channels, low_channels, 1, one, true);
        let ca_max = Conv2d::new(store, rng, &format!("{name}.ca_max"), low_channels, low_channels, 1, one, true);
        let ca_shared = Conv2d::new(store, rng, &format!("{name}.ca_shared"), low_channels, low_channels, 1, one, true);
        let sa_reduce = Conv2d::new(store, rng, &format!("{name}.sa_reduce"), high_channels, low_channels, 1, one, true);
        let sa_conv1 = Conv2d::new(store, rng, &format!("{name}.sa_conv1"), 2, 1, 3, d2, true);
        let sa_conv2 = Conv2d::new(store, rng, &format!("{name}.sa_conv2"), 1, 1, 3, d4, true);
        let fuse_dw = Conv2d::new(store, rng, &format!("{name}.fuse_dw"), low_channels, low_channels, 3, dw, true);
        let fuse_pw = Conv2d::new(store, rng, &format!("{name}.fuse_pw"), low_channels, low_channels, 1, one, true);
        let alpha = store.add_param(format!("{name}.alpha"), Tensor::zeros([1, 1, 1, 1]));
        JaffModule {
            ca_reduce,
            ca_avg,
            ca_max,
            ca_shared,
            sa_reduce,
            sa_conv1,
            sa_conv2,
            fuse_dw,
            fuse_pw,
            alpha,
            low_channels,
            high_channels,
        }
    }

    /// Channel attention M_c over the spatially aligned high-level features:
    /// reduce to the low channel count, pool globally by average and by max,
    /// pass each vector through its own 1x1 conv and a shared 1x1 conv, sum
    /// and squash. Output shape N x C_l x 1 x 1.
    pub fn channel_attention<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, f_h_up: Var) -> Var {
        let reduced = self.ca_reduce.forward(ctx, f_h_up);
        let avg = ctx.tape.global_avg_pool(reduced);
        let max = ctx.tape.global_max_pool(reduced);
        let avg = self.ca_avg.forward(ctx, avg);
        let avg = self.ca_shared.forward(ctx, avg);
        let max = self.ca_max.forward(ctx, max);
        let max = self.ca_shared.forward(ctx, max);
        let sum = ctx.tape.add(avg, max);
        ctx.tape.sigmoid(sum)
    }

    /// Pre-sigmoid spatial logits: reduce channels, pool channelwise by max
    /// and average, concatenate (max plane first), then two dilated 3x3
    /// convolutions at rates 2 and 4.
    fn spatial_logits<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, f_h_up: Var) -> Var {
        let reduced = self.sa_reduce.forward(ctx, f_h_up);
        let max = ctx.tape.channel_max(reduced);
        let avg = ctx.tape.channel_mean(reduced);
        let stacked = ctx.tape.concat_channels(max, avg);
        let y = self.sa_conv1.forward(ctx, stacked);
        self.sa_conv2.forward(ctx, y)
    }

    /// Spatial attention M_s of shape N x 1 x H x W.
    pub fn spatial_attention<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, f_h_up: Var) -> Var {
        let logits = self.spatial_logits(ctx, f_h_up);
        ctx.tape.sigmoid(logits)
    }

    /// Joint map M: rank-1 outer product of M_c and M_s refined by a
    /// depthwise separable dilated convolution, with no squashing after.
    pub fn fuse_maps<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, m_c: Var, m_s: Var) -> Var {
        let outer = ctx.tape.mul(m_c, m_s);
        let y = self.fuse_dw.forward(ctx, outer);
        self.fuse_pw.forward(ctx, y)
    }

    /// Full fusion: upsample the high-level features to the low-level grid,
    /// refine the low-level features as F_l' = alpha * (F_l .* M) + F_l and
    /// concatenate F_l' with the upsampled high-level features.
    pub fn jaff_fuse<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, f_l: Var, f_h: Var) -> Result<Var> {
        let [ln, lc, lh, lw] = ctx.tape.value(f_l).shape();
        let [hn, hc, _, _] = ctx.tape.value(f_h).shape();
        if lc != self.low_channels {
            return Err(Error::Shape(format!(
                "low-level input has {lc} channels, module expects {}",
                self.low_channels
            )));
        }
        if hc != self.high_channels {
            return Err(Error::Shape(format!(
                "high-level input has {hc} channels, module expects {}",
                self.high_channels
            )));
        }
        if ln != hn {
            return Err(Error::Shape(format!("batch mismatch: {ln} vs {hn}")));
        }
        let f_h_up = ctx.tape.resize_bilinear(f_h, lh, lw);
        let m_c = self.channel_attention(ctx, f_h_up);
        let m_s = self.spatial_attention(ctx, f_h_up);
        let m = self.fuse_maps(ctx, m_c, m_s);
        let guided = ctx.tape.mul(f_l, m);
        let alpha = ctx.param_var(self.alpha);
        let scaled = ctx.tape.mul(guided, alpha);
        let refined = ctx.tape.add(scaled, f_l);
        Ok(ctx.tape.concat_channels(refined, f_h_up))
    }
}
