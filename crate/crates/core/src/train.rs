//! One training step: forward with live batch statistics, hybrid loss over
//! all side outputs, backpropagation and an optimizer update.

use alloc::format;

use crate::autodiff::Tape;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::loss::{total_loss_on_tape, LossBreakdown, LossConfig};
use crate::model::JaffNet;
use crate::nn::{BufferAccess, Ctx};
use crate::optim::Adam;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stacks samples into an image batch and a 0/1 mask batch, both
/// `[N, 1, H, W]`. All samples must share one spatial size.
pub fn stack_samples<S: Scalar>(samples: &[Sample<S>]) -> Result<(Tensor<S>, Tensor<S>)> {
    if samples.is_empty() {
        return Err(Error::Config("cannot stack an empty batch".into()));
    }
    let [_, _, h, w] = samples[0].image.shape();
    for (i, s) in samples.iter().enumerate() {
        let [_, _, sh, sw] = s.image.shape();
        if (sh, sw) != (h, w) {
            return Err(Error::Shape(format!(
                "sample {i} is {sh}x{sw}, the batch started at {h}x{w}"
            )));
        }
    }
    let n = samples.len();
    let mut images = Tensor::zeros([n, 1, h, w]);
    let mut masks = Tensor::zeros([n, 1, h, w]);
    for (i, s) in samples.iter().enumerate() {
        images.plane_mut(i, 0).copy_from_slice(s.image.plane(0, 0));
        let dst = masks.plane_mut(i, 0);
        for (d, &m) in dst.iter_mut().zip(s.mask.values()) {
            *d = if m { S::one() } else { S::zero() };
        }
    }
    Ok((images, masks))
}

/// Runs one optimization step on a batch of normalized images against 0/1
/// target masks. Batch-norm running statistics update in place.
pub fn train_step<S: Scalar>(
    model: &mut JaffNet<S>,
    optimizer: &mut Adam<S>,
    images: &Tensor<S>,
    targets: &Tensor<S>,
    loss: &LossConfig,
) -> Result<LossBreakdown> {
    if images.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "images {:?} and targets {:?} must agree",
            images.shape(),
            targets.shape()
        )));
    }
    let mut buffers = model.params.buffers().to_vec();
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let trace = {
        let mut ctx = Ctx {
            tape: &mut tape,
            params: &model.params,
            buffers: BufferAccess::Training(&mut buffers),
            train: true,
        };
        model.forward_on_tape(&mut ctx, x)?
    };
    let (root, breakdown) = total_loss_on_tape(&mut tape, &trace.sides, targets, loss)?;
    let grads = tape.backward(root, model.params.param_count());
    optimizer.step(&mut model.params, &grads)?;
    for (dst, src) in model.params.buffers_mut().iter_mut().zip(&buffers) {
        dst.mean = src.mean.clone();
        dst.var = src.var.clone();
    }
    Ok(breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{binarize_gt, normalize, synth_generate, BackgroundKind, DefectKind, SynthSpec};
    use crate::encoder::NetworkConfig;
    use crate::optim::AdamConfig;

    fn tiny_batch<S: Scalar>(n: usize) -> (Tensor<S>, Tensor<S>) {
        let samples: Vec<Sample<S>> = (0..n)
            .map(|i| {
                let spec = SynthSpec {
                    image_size: 32,
                    defect_kind: DefectKind::Patch,
                    contrast: 1.0,
                    background: BackgroundKind::Flat,
                    noise_rho: 0.0,
                    seed: i as u64,
                };
                let s = synth_generate(&spec).unwrap();
                Sample::new(normalize(&s.image), s.mask).unwrap()
            })
            .collect();
        stack_samples(&samples).unwrap()
    }

    #[test]
    fn stacking_collects_images_and_binary_masks() {
        let (images, masks) = tiny_batch::<f32>(3);
        assert_eq!(images.shape(), [3, 1, 32, 32]);
        assert_eq!(masks.shape(), [3, 1, 32, 32]);
        assert!(masks.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(masks.data().iter().any(|&v| v == 1.0));
    }

    #[test]
    fn stacking_rejects_mixed_sizes_and_empty_batches() {
        assert!(stack_samples::<f32>(&[]).is_err());
        let a = synth_generate::<f32>(&SynthSpec {
            image_size: 32,
            defect_kind: DefectKind::None,
            contrast: 1.0,
            background: BackgroundKind::Flat,
            noise_rho: 0.0,
            seed: 0,
        })
        .unwrap();
        let b = synth_generate::<f32>(&SynthSpec {
            image_size: 48,
            defect_kind: DefectKind::None,
            contrast: 1.0,
            background: BackgroundKind::Flat,
            noise_rho: 0.0,
            seed: 0,
        })
        .unwrap();
        assert!(stack_samples(&[a, b]).is_err());
    }

    #[test]
    fn a_few_steps_reduce_the_training_loss() {
        let config = NetworkConfig::with_base_width(4);
        let mut model = JaffNet::<f32>::new(&config, 3).unwrap();
        let adam_cfg = AdamConfig { learning_rate: 2e-3, ..AdamConfig::default() };
        let mut adam = Adam::new(adam_cfg, &model.params).unwrap();
        let (images, masks) = tiny_batch::<f32>(2);
        let loss_cfg = LossConfig::default();
        let first = train_step(&mut model, &mut adam, &images, &masks, &loss_cfg).unwrap();
        let mut last = first.clone();
        for _ in 0..59 {
            last = train_step(&mut model, &mut adam, &images, &masks, &loss_cfg).unwrap();
        }
        assert!(
            last.total < 0.6 * first.total,
            "loss went from {} to {}",
            first.total,
            last.total
        );
        assert_eq!(adam.step_count(), 60);
    }

    #[test]
    fn training_updates_batch_norm_buffers() {
        let config = NetworkConfig::with_base_width(4);
        let mut model = JaffNet::<f32>::new(&config, 5).unwrap();
        let before: Vec<f32> = model.params.buffers().iter().flat_map(|b| b.mean.clone()).collect();
        let mut adam = Adam::new(AdamConfig::default(), &model.params).unwrap();
        let (images, masks) = tiny_batch::<f32>(2);
        train_step(&mut model, &mut adam, &images, &masks, &LossConfig::default()).unwrap();
        let after: Vec<f32> = model.params.buffers().iter().flat_map(|b| b.mean.clone()).collect();
        assert!(before != after, "running statistics never moved");
    }

    #[test]
    fn identical_seeds_train_identically() {
        let run = || {
            let config = NetworkConfig::with_base_width(4);
            let mut model = JaffNet::<f32>::new(&config, 7).unwrap();
            let mut adam = Adam::new(AdamConfig::default(), &model.params).unwrap();
            let (images, masks) = tiny_batch::<f32>(2);
            let mut totals = Vec::new();
            for _ in 0..3 {
                let b = train_step(&mut model, &mut adam, &images, &masks, &LossConfig::default()).unwrap();
                totals.push(b.total);
            }
            let bits: Vec<u32> = model
                .params
                .params()
                .iter()
                .flat_map(|p| p.tensor.data().iter().map(|v| v.to_bits()))
                .collect();
            (totals, bits)
        };
        let (ta, ba) = run();
        let (tb, bb) = run();
        assert_eq!(ta, tb);
        assert_eq!(ba, bb);
    }

    #[test]
    fn binarized_gray_masks_feed_training() {
        let gray = Tensor::<f32>::from_fn([1, 1, 32, 32], |_, _, y, x| {
            if (8..20).contains(&y) && (10..22).contains(&x) {
                0.8
            } else {
                0.0
            }
        });
        let mask = binarize_gt(&gray).unwrap();
        assert_eq!(mask.foreground_count(), 12 * 12);
        let sample = Sample::new(gray, mask).unwrap();
        let (images, masks) = stack_samples(&[sample]).unwrap();
        assert_eq!(images.shape(), [1, 1, 32, 32]);
        assert_eq!(masks.data().iter().filter(|&&v| v == 1.0).count(), 144);
    }
}
