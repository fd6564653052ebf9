//! The full saliency network: encoder, dense receptive field stage, four
//! attention-fused decode stages and five deeply supervised side heads.
//!
//! Decode stage D_i fuses the matching encoder feature with the previous
//! stage's output (D1 pairs E4 with the deep stage), reduces the fused
//! channels with a conv-bn-relu block, and every stage feeds a side head:
//! a 3x3 convolution to one channel, bilinear upsampling to the input size
//! and a sigmoid. The last side output is the final saliency map.

use alloc::format;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ConvCfg, Tape, Var};
use crate::drf::DrfModule;
use crate::encoder::{validate_input, BasicBlock, Encoder, NetworkConfig};
use crate::error::{Error, Result};
use crate::jaff::JaffModule;
use crate::nn::{BatchNorm2d, BufferAccess, Conv2d, Ctx, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One decode stage: optional attention-guided fusion followed by a
/// channel-reducing conv-bn-relu block.
struct DecodeStage {
    jaff: Option<JaffModule>,
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl DecodeStage {
    fn new<S: Scalar, R: Rng>(
        store: &mut ParamSet<S>,
        rng: &mut R,
        name: &str,
        low_channels: usize,
        high_channels: usize,
        width: usize,
        use_jaff: bool,
    ) -> Self {
        let jaff = use_jaff
            .then(|| JaffModule::new(store, rng, &format!("{name}.jaff"), low_channels, high_channels));
        let cfg = ConvCfg { pad: 1, ..ConvCfg::default() };
        let conv = Conv2d::new(
            store,
            rng,
            &format!("{name}.conv"),
            low_channels + high_channels,
            width,
            3,
            cfg,
            false,
        );
        let bn = BatchNorm2d::new(store, &format!("{name}.bn"), width);
        DecodeStage { jaff, conv, bn }
    }

    fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, f_l: Var, f_h: Var) -> Result<Var> {
        let fused = match &self.jaff {
            Some(jaff) => jaff.jaff_fuse(ctx, f_l, f_h)?,
            None => {
                let [_, _, lh, lw] = ctx.tape.value(f_l).shape();
                let up = ctx.tape.resize_bilinear(f_h, lh, lw);
                ctx.tape.concat_channels(f_l, up)
            }
        };
        let y = self.conv.forward(ctx, fused);
        let y = self.bn.forward(ctx, y);
        Ok(ctx.tape.relu(y))
    }
}

/// Saliency maps produced by one forward pass.
#[derive(Debug, Clone)]
pub struct NetworkOutput<S: Scalar> {
    /// The final prediction, identical to the last side output.
    pub final_map: Tensor<S>,
    /// Deep-supervision outputs: deep stage, then D1 through D4.
    pub side_outputs: [Tensor<S>; 5],
}

/// On-tape handles from one forward pass, for training and inspection.
pub struct ModelTrace {
    /// Side outputs at input resolution, after the sigmoid.
    pub sides: [Var; 5],
    /// Native-resolution features feeding each side head: the deep stage
    /// output, then D1 through D4.
    pub stage_maps: [Var; 5],
}

/// Context stage between the encoder and the decoder: the dense receptive
/// field module, or two residual blocks when it is ablated.
enum DeepStage {
    Drf(DrfModule),
    ResBlocks([BasicBlock; 2]),
}

/// The complete network: layer handles plus parameter values.
pub struct JaffNet<S: Scalar> {
    pub config: NetworkConfig,
    pub params: ParamSet<S>,
    encoder: Encoder,
    deep: DeepStage,
    decode: [DecodeStage; 4],
    heads: [Conv2d; 5],
}

impl<S: Scalar> JaffNet<S> {
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(&mut params, &mut rng, config);
        let chans = config.stage_channels();
        let deep = if config.use_drf {
            DeepStage::Drf(DrfModule::new(&mut params, &mut rng, "drf", chans[4], config.mrf_rates))
        } else {
            DeepStage::ResBlocks([
                BasicBlock::new(&mut params, &mut rng, "drf_substitute.block0", chans[4], chans[4], 1),
                BasicBlock::new(&mut params, &mut rng, "drf_substitute.block1", chans[4], chans[4], 1),
            ])
        };

        let widths = config.decoder_widths;
        let mut stage_index = 0;
        let decode = [(); 4].map(|_| {
            let i = stage_index;
            stage_index += 1;
            let low = chans[3 - i];
            let high = if i == 0 { chans[4] } else { widths[i - 1] };
            DecodeStage::new(
                &mut params,
                &mut rng,
                &format!("decoder.d{}", i + 1),
                low,
                high,
                widths[i],
                config.use_jaff,
            )
        });

        let head_inputs = [chans[4], widths[0], widths[1], widths[2], widths[3]];
        let mut head_index = 0;
        let heads = [(); 5].map(|_| {
            let i = head_index;
            head_index += 1;
            let cfg = ConvCfg { pad: 1, ..ConvCfg::default() };
            Conv2d::new(&mut params, &mut rng, &format!("head.s{i}"), head_inputs[i], 1, 3, cfg, true)
        });

        Ok(JaffNet { config: config.clone(), params, encoder, deep, decode, heads })
    }

    /// Records a full forward pass on the caller's tape and returns the
    /// side-output handles. The caller controls train/eval mode and buffer
    /// access through `ctx`.
    pub fn forward_on_tape(&self, ctx: &mut Ctx<'_, S>, image: Var) -> Result<ModelTrace> {
        let [_, c, h, w] = ctx.tape.value(image).shape();
        if c != self.config.input_channels {
            return Err(Error::Shape(format!(
                "input has {c} channels, expected {}",
                self.config.input_channels
            )));
        }
        let feats = self.encoder.forward(ctx, image);
        let deep = match &self.deep {
            DeepStage::Drf(drf) => drf.forward(ctx, feats[4]),
            DeepStage::ResBlocks(blocks) => {
                let y = blocks[0].forward(ctx, feats[4]);
                blocks[1].forward(ctx, y)
            }
        };
        let mut stage_maps = [deep; 5];
        let mut high = deep;
        for (i, stage) in self.decode.iter().enumerate() {
            high = stage.forward(ctx, feats[3 - i], high).map_err(|e| match e {
                Error::Shape(m) => Error::Shape(format!("decode stage D{}: {m}", i + 1)),
                other => other,
            })?;
            stage_maps[i + 1] = high;
        }
        let mut sides = [deep; 5];
        for (i, head) in self.heads.iter().enumerate() {
            let logits = head.forward(ctx, stage_maps[i]);
            let up = ctx.tape.resize_bilinear(logits, h, w);
            sides[i] = ctx.tape.sigmoid(up);
        }
        Ok(ModelTrace { sides, stage_maps })
    }

    /// Inference: frozen batch statistics, no state mutation.
    pub fn forward_eval(&self, image: &Tensor<S>) -> Result<NetworkOutput<S>> {
        validate_input(image, self.config.input_channels)?;
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let trace = {
            let mut ctx = Ctx {
                tape: &mut tape,
                params: &self.params,
                buffers: BufferAccess::Frozen(self.params.buffers()),
                train: false,
            };
            self.forward_on_tape(&mut ctx, x)?
        };
        let side_outputs = trace.sides.map(|v| tape.value(v).clone());
        Ok(NetworkOutput { final_map: side_outputs[4].clone(), side_outputs })
    }

    /// Exact number of learnable scalars.
    pub fn count_params(&self) -> usize {
        self.params.scalar_count()
    }
}
