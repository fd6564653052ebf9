//! Five-stage residual encoder with a full-resolution stem.
//!
//! The stem is a single 3x3 stride-1 convolution with no pooling behind it,
//! so stage 1 runs at the input resolution and each later stage halves it.
//! Stage widths follow the (1, 2, 4, 8, 8) x base_width signature: stages
//! 2-4 downsample with stride-2 entry blocks, stage 5 downsamples with a
//! 2x2 max-pool and keeps the channel count.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ConvCfg, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, BufferAccess, Conv2d, Ctx, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Structural hyperparameters shared by the encoder, decoder and loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Channel width of stage 1; later stages scale it by (2, 4, 8, 8).
    pub base_width: usize,
    /// Channels of the input image (1 for grayscale).
    pub input_channels: usize,
    /// Dilation rates of the three parallel branches inside each MRF unit.
    pub mrf_rates: [usize; 3],
    /// Number of deeply supervised outputs, fixed at 5.
    pub num_side_outputs: usize,
    /// Channels produced by the four decode stages.
    pub decoder_widths: [usize; 4],
    /// Side length of the structural-similarity window.
    pub ssim_window: usize,
    /// Gaussian sigma of the structural-similarity window.
    pub ssim_sigma: f64,
    /// Fuse decoder stages through attention-guided fusion; plain
    /// concatenation when disabled (ablation switch).
    pub use_jaff: bool,
    /// Insert the dense receptive-field module after stage 5; identity
    /// when disabled (ablation switch).
    pub use_drf: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_width: 64,
            input_channels: 1,
            mrf_rates: [1, 2, 4],
            num_side_outputs: 5,
            decoder_widths: [256, 128, 64, 64],
            ssim_window: 11,
            ssim_sigma: 1.5,
            use_jaff: true,
            use_drf: true,
        }
    }
}

impl NetworkConfig {
    /// Default configuration rescaled to `base_width`, with decoder widths
    /// scaled by base_width/64 to keep the channel-reduction ratios.
    pub fn with_base_width(base_width: usize) -> Self {
        NetworkConfig {
            base_width,
            decoder_widths: [4 * base_width, 2 * base_width, base_width, base_width],
            ..NetworkConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.base_width % 4 != 0 {
            return Err(Error::Config(format!(
                "base_width must be a positive multiple of 4, got {}",
                self.base_width
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be positive".into()));
        }
        if self.mrf_rates[0] == 0 || self.mrf_rates[0] >= self.mrf_rates[1] || self.mrf_rates[1] >= self.mrf_rates[2] {
            return Err(Error::Config(format!(
                "mrf_rates must be strictly increasing and positive, got {:?}",
                self.mrf_rates
            )));
        }
        if self.num_side_outputs != 5 {
            return Err(Error::Config(format!(
                "num_side_outputs is fixed at 5, got {}",
                self.num_side_outputs
            )));
        }
        if self.decoder_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "decoder_widths must be positive, got {:?}",
                self.decoder_widths
            )));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::Config(format!(
                "ssim_window must be odd and at least 3, got {}",
                self.ssim_window
            )));
        }
        if !(self.ssim_sigma > 0.0) || !self.ssim_sigma.is_finite() {
            return Err(Error::Config(format!(
                "ssim_sigma must be positive and finite, got {}",
                self.ssim_sigma
            )));
        }
        Ok(())
    }

    /// Output channels of stages 1 through 5.
    pub fn stage_channels(&self) -> [usize; 5] {
        let w = self.base_width;
        [w, 2 * w, 4 * w, 8 * w, 8 * w]
    }
}

/// Standard residual basic block: two 3x3 convolutions with batch norm,
/// identity skip (1x1 projection when the stride or width changes).
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    proj: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamSet<S>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Self {
        let entry = ConvCfg { stride, pad: 1, ..ConvCfg::default() };
        let inner = ConvCfg { pad: 1, ..ConvCfg::default() };
        let conv1 = Conv2d::new(store, rng, &format!("{name}.conv1"), in_channels, out_channels, 3, entry, false);
        let bn1 = BatchNorm2d::new(store, &format!("{name}.bn1"), out_channels);
        let conv2 = Conv2d::new(store, rng, &format!("{name}.conv2"), out_channels, out_channels, 3, inner, false);
        let bn2 = BatchNorm2d::new(store, &format!("{name}.bn2"), out_channels);
        let proj = (stride != 1 || in_channels != out_channels).then(|| {
            let cfg = ConvCfg { stride, ..ConvCfg::default() };
            let conv = Conv2d::new(store, rng, &format!("{name}.proj"), in_channels, out_channels, 1, cfg, false);
            let bn = BatchNorm2d::new(store, &format!("{name}.proj_bn"), out_channels);
            (conv, bn)
        });
        BasicBlock { conv1, bn1, conv2, bn2, proj }
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var) -> Var {
        let y = self.conv1.forward(ctx, x);
        let y = self.bn1.forward(ctx, y);
        let y = ctx.tape.relu(y);
        let y = self.conv2.forward(ctx, y);
        let y = self.bn2.forward(ctx, y);
        let skip = match &self.proj {
            Some((conv, bn)) => {
                let s = conv.forward(ctx, x);
                bn.forward(ctx, s)
            }
            None => x,
        };
        let y = ctx.tape.add(y, skip);
        ctx.tape.relu(y)
    }
}

/// Layer handles of the five-stage encoder; values live in a [`ParamSet`].
pub struct Encoder {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    /// Two basic blocks per stage; stage 5 (index 4) is preceded by a
    /// 2x2 max-pool in [`Encoder::forward`].
    stages: Vec<Vec<BasicBlock>>,
}

impl Encoder {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamSet<S>, rng: &mut R, config: &NetworkConfig) -> Self {
        let chans = config.stage_channels();
        let stem_cfg = ConvCfg { pad: 1, ..ConvCfg::default() };
        let stem = Conv2d::new(
            store,
            rng,
            "encoder.stem.conv",
            config.input_channels,
            config.base_width,
            3,
            stem_cfg,
            false,
        );
        let stem_bn = BatchNorm2d::new(store, "encoder.stem.bn", config.base_width);
        let mut stages = Vec::with_capacity(5);
        let mut in_channels = config.base_width;
        for (i, &out_channels) in chans.iter().enumerate() {
            // Stages 2-4 downsample in their entry block; stage 5 relies on
            // the max-pool instead.
            let entry_stride = if i >= 1 && i <= 3 { 2 } else { 1 };
            let name0 = format!("encoder.stage{}.block0", i + 1);
            let name1 = format!("encoder.stage{}.block1", i + 1);
            let block0 = BasicBlock::new(store, rng, &name0, in_channels, out_channels, entry_stride);
            let block1 = BasicBlock::new(store, rng, &name1, out_channels, out_channels, 1);
            stages.push(alloc::vec![block0, block1]);
            in_channels = out_channels;
        }
        Encoder { stem, stem_bn, stages }
    }

    /// Runs all five stages and returns their outputs in order E1..E5.
    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, image: Var) -> [Var; 5] {
        let x = self.stem.forward(ctx, image);
        let x = self.stem_bn.forward(ctx, x);
        let mut x = ctx.tape.relu(x);
        let mut outputs = [x; 5];
        for (i, stage) in self.stages.iter().enumerate() {
            if i == 4 {
                x = ctx.tape.max_pool2(x);
            }
            for block in stage {
                x = block.forward(ctx, x);
            }
            outputs[i] = x;
        }
        outputs
    }
}

/// A built encoder: layer handles plus their parameter values.
pub struct EncoderState<S: Scalar> {
    pub encoder: Encoder,
    pub params: ParamSet<S>,
    pub config: NetworkConfig,
}

/// Outputs of the five encoder stages for one batch.
#[derive(Debug, Clone)]
pub struct EncoderFeatures<S: Scalar> {
    pub stages: [Tensor<S>; 5],
}

/// Builds an encoder with deterministic He-normal initialization from `seed`.
pub fn build_encoder<S: Scalar>(config: &NetworkConfig, seed: u64) -> Result<EncoderState<S>> {
    config.validate()?;
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = Encoder::new(&mut params, &mut rng, config);
    Ok(EncoderState { encoder, params, config: config.clone() })
}

/// Checks an input batch against the network contract: the configured
/// channel count and spatial sizes divisible by 16.
pub fn validate_input<S: Scalar>(image: &Tensor<S>, input_channels: usize) -> Result<()> {
    let [_, c, h, w] = image.shape();
    if c != input_channels {
        return Err(Error::Shape(format!(
            "input has {c} channels, expected {input_channels}"
        )));
    }
    if h % 16 != 0 {
        return Err(Error::Shape(format!("input height {h} is not divisible by 16")));
    }
    if w % 16 != 0 {
        return Err(Error::Shape(format!("input width {w} is not divisible by 16")));
    }
    Ok(())
}

/// Inference-mode forward pass: batch statistics stay frozen and the state
/// is left untouched.
pub fn encode<S: Scalar>(state: &EncoderState<S>, image: &Tensor<S>) -> Result<EncoderFeatures<S>> {
    validate_input(image, state.config.input_channels)?;
    let mut tape = Tape::new();
    let x = tape.constant(image.clone());
    let vars = {
        let mut ctx = Ctx {
            tape: &mut tape,
            params: &state.params,
            buffers: BufferAccess::Frozen(state.params.buffers()),
            train: false,
        };
        state.encoder.forward(&mut ctx, x)
    };
    Ok(EncoderFeatures { stages: vars.map(|v| tape.value(v).clone()) })
}
