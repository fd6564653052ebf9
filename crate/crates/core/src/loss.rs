//! Hybrid training objective: BCE + IoU + SSIM per side output.
//!
//! Each of the five deeply supervised outputs is scored against the same
//! binary target with a pixel-classification term, a region-overlap term
//! and a patch-structure term; the total objective is the sum of all
//! enabled terms. The SSIM term is assembled from primitive tape ops, so
//! its gradient needs no dedicated backward rule.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{ConvCfg, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Clamp applied to predictions before the BCE logs.
pub const BCE_EPS: f64 = 1e-7;

/// Structural similarity window settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
}

impl SsimConfig {
    /// Luminance stabilizer, 0.01 squared.
    pub const C1: f64 = 1e-4;
    /// Contrast stabilizer, 0.03 squared.
    pub const C2: f64 = 9e-4;

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "ssim window must be odd and at least 3, got {}",
                self.window
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("ssim sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig { window: 11, sigma: 1.5 }
    }
}

/// Which loss terms contribute to the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub use_bce: bool,
    pub use_iou: bool,
    pub use_ssim: bool,
    /// Supervise all five outputs; when disabled only the final output
    /// contributes.
    pub deep_supervision: bool,
    pub ssim: SsimConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            use_bce: true,
            use_iou: true,
            use_ssim: true,
            deep_supervision: true,
            ssim: SsimConfig::default(),
        }
    }
}

/// The three loss terms of one side output.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub bce: f64,
    pub iou: f64,
    pub ssim: f64,
}

impl LossTerms {
    pub fn sum(&self) -> f64 {
        self.bce + self.iou + self.ssim
    }
}

/// All fifteen loss terms of one training example plus their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub per_output: [LossTerms; 5],
    pub total: f64,
}

/// Normalized 2D Gaussian window of side `n`, shaped for use as a
/// single-channel convolution kernel.
pub fn gaussian_window<S: Scalar>(n: usize, sigma: f64) -> Tensor<S> {
    let c = (n / 2) as f64;
    let mut t = Tensor::from_fn([1, 1, n, n], |_, _, h, w| {
        let dh = h as f64 - c;
        let dw = w as f64 - c;
        S::from_f64(crate::scalar::exp64(-(dh * dh + dw * dw) / (2.0 * sigma * sigma)))
    });
    let sum = t.data().iter().map(|v| v.as_f64()).sum::<f64>();
    for v in t.data_mut() {
        *v = S::from_f64(v.as_f64() / sum);
    }
    t
}

fn check_pair<S: Scalar>(p: &Tensor<S>, g: &Tensor<S>) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(Error::Shape(format!(
            "prediction shape {:?} does not match target shape {:?}",
            p.shape(),
            g.shape()
        )));
    }
    Ok(())
}

/// Records the BCE term on the tape. Mean over every pixel of
/// -[G log P + (1-G) log(1-P)] with P clamped away from 0 and 1.
pub fn bce_loss_on_tape<S: Scalar>(tape: &mut Tape<S>, p: Var, g: &Tensor<S>) -> Result<Var> {
    check_pair(tape.value(p), g)?;
    Ok(tape.bce_loss(p, g, S::from_f64(BCE_EPS)))
}

/// Records the IoU term on the tape: mean over images of
/// 1 - sum(PG) / sum(P + G - PG), with an empty union scoring 0.
pub fn iou_loss_on_tape<S: Scalar>(tape: &mut Tape<S>, p: Var, g: &Tensor<S>) -> Result<Var> {
    check_pair(tape.value(p), g)?;
    Ok(tape.iou_loss(p, g))
}

/// Records the SSIM term on the tape: Gaussian-weighted patch statistics
/// at every pixel (reflection padding), loss = 1 - mean patch similarity.
pub fn ssim_loss_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    p: Var,
    g: &Tensor<S>,
    cfg: &SsimConfig,
) -> Result<Var> {
    cfg.validate()?;
    check_pair(tape.value(p), g)?;
    let [_, c, h, w] = g.shape();
    if c != 1 {
        return Err(Error::Shape(format!("ssim expects single-channel maps, got {c} channels")));
    }
    if h < cfg.window || w < cfg.window {
        return Err(Error::Config(format!(
            "image {h}x{w} is smaller than the {0}x{0} ssim window",
            cfg.window
        )));
    }
    let pad = cfg.window / 2;
    let window = tape.constant(gaussian_window(cfg.window, cfg.sigma));
    let conv_cfg = ConvCfg::default();
    let blur = |tape: &mut Tape<S>, x: Var| {
        let padded = tape.pad_reflect(x, pad);
        tape.conv2d(padded, window, None, conv_cfg)
    };

    let gv = tape.constant(g.clone());
    let mu_p = blur(tape, p);
    let mu_g = blur(tape, gv);
    let pp = tape.mul(p, p);
    let gg = tape.mul(gv, gv);
    let pg = tape.mul(p, gv);
    let e_pp = blur(tape, pp);
    let e_gg = blur(tape, gg);
    let e_pg = blur(tape, pg);

    let mu_pp = tape.mul(mu_p, mu_p);
    let mu_gg = tape.mul(mu_g, mu_g);
    let mu_pg = tape.mul(mu_p, mu_g);
    let neg = |tape: &mut Tape<S>, x: Var| tape.affine(x, S::from_f64(-1.0), S::zero());
    let var_p = {
        let n = neg(tape, mu_pp);
        tape.add(e_pp, n)
    };
    let var_g = {
        let n = neg(tape, mu_gg);
        tape.add(e_gg, n)
    };
    let cov = {
        let n = neg(tape, mu_pg);
        tape.add(e_pg, n)
    };

    let c1 = S::from_f64(SsimConfig::C1);
    let c2 = S::from_f64(SsimConfig::C2);
    let two = S::from_f64(2.0);
    let num_l = tape.affine(mu_pg, two, c1);
    let num_c = tape.affine(cov, two, c2);
    let den_l = {
        let s = tape.add(mu_pp, mu_gg);
        tape.affine(s, S::one(), c1)
    };
    let den_c = {
        let s = tape.add(var_p, var_g);
        tape.affine(s, S::one(), c2)
    };
    let num = tape.mul(num_l, num_c);
    let den = tape.mul(den_l, den_c);
    let ssim_map = tape.div(num, den);
    let mean = tape.mean_all(ssim_map);
    Ok(tape.affine(mean, S::from_f64(-1.0), S::one()))
}

/// Builds the total objective over the side outputs and reports every term.
/// Returns the scalar loss variable together with the recorded breakdown.
pub fn total_loss_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    sides: &[Var],
    target: &Tensor<S>,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    if sides.len() != 5 {
        return Err(Error::Config(format!("expected 5 side outputs, got {}", sides.len())));
    }
    let mut per_output = [LossTerms::default(); 5];
    let mut total: Option<Var> = None;
    let accumulate = |tape: &mut Tape<S>, total: &mut Option<Var>, term: Var| -> f64 {
        *total = Some(match *total {
            None => term,
            Some(t) => tape.add(t, term),
        });
        tape.value(term).data()[0].as_f64()
    };
    for (k, &side) in sides.iter().enumerate() {
        if !cfg.deep_supervision && k != 4 {
            continue;
        }
        if cfg.use_bce {
            let term = bce_loss_on_tape(tape, side, target)?;
            per_output[k].bce = accumulate(tape, &mut total, term);
        }
        if cfg.use_iou {
            let term = iou_loss_on_tape(tape, side, target)?;
            per_output[k].iou = accumulate(tape, &mut total, term);
        }
        if cfg.use_ssim {
            let term = ssim_loss_on_tape(tape, side, target, &cfg.ssim)?;
            per_output[k].ssim = accumulate(tape, &mut total, term);
        }
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(S::zero())),
    };
    let breakdown = LossBreakdown {
        per_output,
        total: tape.value(total).data()[0].as_f64(),
    };
    Ok((total, breakdown))
}

/// Evaluates the BCE term of a prediction/target pair.
pub fn bce_loss<S: Scalar>(p: &Tensor<S>, g: &Tensor<S>) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let v = bce_loss_on_tape(&mut tape, pv, g)?;
    Ok(tape.value(v).data()[0].as_f64())
}

/// Evaluates the IoU term of a prediction/target pair.
pub fn iou_loss<S: Scalar>(p: &Tensor<S>, g: &Tensor<S>) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let v = iou_loss_on_tape(&mut tape, pv, g)?;
    Ok(tape.value(v).data()[0].as_f64())
}

/// Evaluates the SSIM term of a prediction/target pair.
pub fn ssim_loss<S: Scalar>(p: &Tensor<S>, g: &Tensor<S>, cfg: &SsimConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let v = ssim_loss_on_tape(&mut tape, pv, g, cfg)?;
    Ok(tape.value(v).data()[0].as_f64())
}

/// Evaluates the full objective for already-materialized side outputs.
pub fn total_loss<S: Scalar>(
    sides: &[Tensor<S>],
    target: &Tensor<S>,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = sides.iter().map(|t| tape.constant(t.clone())).collect();
    let (_, breakdown) = total_loss_on_tape(&mut tape, &vars, target, cfg)?;
    Ok(breakdown)
}
