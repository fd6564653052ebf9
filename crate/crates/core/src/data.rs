//! Data pipeline: gray normalization, train-time augmentation,
//! salt-and-pepper corruption, mask binarization and a synthetic defect
//! generator for dataset-free training and tests.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::resize::axis_taps;
use crate::error::{Error, Result};
use crate::metrics::GroundTruthMask;
use crate::scalar::{ceil64, cos64, floor64, sin64, Scalar};
use crate::tensor::Tensor;

/// Mean gray level subtracted by [`normalize`].
pub const GRAY_MEAN: f64 = 0.4669;

/// Gray standard deviation divided out by [`normalize`].
pub const GRAY_STD: f64 = 0.2437;

/// Side length images are resized to before the training crop.
pub const TRAIN_RESIZE: usize = 256;

/// Side length of the random training crop.
pub const TRAIN_CROP: usize = 224;

/// Standardizes raw gray values: `(v - GRAY_MEAN) / GRAY_STD`.
pub fn normalize<S: Scalar>(image: &Tensor<S>) -> Tensor<S> {
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = S::from_f64((v.as_f64() - GRAY_MEAN) / GRAY_STD);
    }
    out
}

/// Inverse of [`normalize`]: `v * GRAY_STD + GRAY_MEAN`.
pub fn denormalize<S: Scalar>(image: &Tensor<S>) -> Tensor<S> {
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = S::from_f64(v.as_f64() * GRAY_STD + GRAY_MEAN);
    }
    out
}

/// Pure bilinear resize of every channel to `out_h x out_w`, with
/// half-pixel sample centers. Resizing to the input size copies exactly.
pub fn resize_bilinear<S: Scalar>(t: &Tensor<S>, out_h: usize, out_w: usize) -> Tensor<S> {
    let [n, c, h, w] = t.shape();
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for ni in 0..n {
        for ci in 0..c {
            let src = t.plane(ni, ci);
            let dst = out.plane_mut(ni, ci);
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let v00 = src[y0 * w + x0].as_f64();
                    let v01 = src[y0 * w + x1].as_f64();
                    let v10 = src[y1 * w + x0].as_f64();
                    let v11 = src[y1 * w + x1].as_f64();
                    let top = v00 * wx0 + v01 * wx1;
                    let bottom = v10 * wx0 + v11 * wx1;
                    dst[oy * out_w + ox] = S::from_f64(top * wy0 + bottom * wy1);
                }
            }
        }
    }
    out
}

/// Nearest-neighbor mask resize using the same sample geometry as
/// [`resize_bilinear`]: each output pixel takes the source tap with the
/// larger bilinear weight.
pub fn resize_mask_nearest(mask: &GroundTruthMask, out_h: usize, out_w: usize) -> GroundTruthMask {
    let (h, w) = (mask.height(), mask.width());
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut values = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, wy0, _) in &ty {
        let y = if wy0 >= 0.5 { y0 } else { y1 };
        for &(x0, x1, wx0, _) in &tx {
            let x = if wx0 >= 0.5 { x0 } else { x1 };
            values.push(mask.values()[y * w + x]);
        }
    }
    GroundTruthMask::new(out_h, out_w, values).expect("resized mask dimensions are consistent")
}

/// One training example: a raw gray image in `[0, 1]` and its binary mask.
#[derive(Debug, Clone)]
pub struct Sample<S: Scalar> {
    pub image: Tensor<S>,
    pub mask: GroundTruthMask,
}

impl<S: Scalar> Sample<S> {
    pub fn new(image: Tensor<S>, mask: GroundTruthMask) -> Result<Self> {
        let [n, c, h, w] = image.shape();
        if n != 1 || c != 1 {
            return Err(Error::Shape(format!("sample image must be [1, 1, H, W], got {:?}", image.shape())));
        }
        if h != mask.height() || w != mask.width() {
            return Err(Error::Shape(format!(
                "sample image {h}x{w} does not match its mask {}x{}",
                mask.height(),
                mask.width()
            )));
        }
        Ok(Sample { image, mask })
    }
}

fn crop_image<S: Scalar>(t: &Tensor<S>, y0: usize, x0: usize, side: usize) -> Tensor<S> {
    let [_, _, _, w] = t.shape();
    let src = t.plane(0, 0);
    Tensor::from_fn([1, 1, side, side], |_, _, y, x| src[(y0 + y) * w + (x0 + x)])
}

fn crop_mask(m: &GroundTruthMask, y0: usize, x0: usize, side: usize) -> GroundTruthMask {
    let w = m.width();
    let mut values = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            values.push(m.values()[(y0 + y) * w + (x0 + x)]);
        }
    }
    GroundTruthMask::new(side, side, values).expect("crop dimensions are consistent")
}

fn flip_image<S: Scalar>(t: &Tensor<S>, horizontal: bool, vertical: bool) -> Tensor<S> {
    let [_, _, h, w] = t.shape();
    let src = t.plane(0, 0);
    Tensor::from_fn([1, 1, h, w], |_, _, y, x| {
        let sy = if vertical { h - 1 - y } else { y };
        let sx = if horizontal { w - 1 - x } else { x };
        src[sy * w + sx]
    })
}

fn flip_mask(m: &GroundTruthMask, horizontal: bool, vertical: bool) -> GroundTruthMask {
    let (h, w) = (m.height(), m.width());
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let sy = if vertical { h - 1 - y } else { y };
            let sx = if horizontal { w - 1 - x } else { x };
            values.push(m.values()[sy * w + sx]);
        }
    }
    GroundTruthMask::new(h, w, values).expect("flip preserves dimensions")
}

/// Training augmentation: resize to 256, random 224 crop, independent 50%
/// horizontal and vertical flips. The mask goes through the identical
/// geometry, with nearest-neighbor sampling for the resize.
pub fn train_transform<S: Scalar>(sample: &Sample<S>, seed: u64) -> Sample<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = resize_bilinear(&sample.image, TRAIN_RESIZE, TRAIN_RESIZE);
    let mask = resize_mask_nearest(&sample.mask, TRAIN_RESIZE, TRAIN_RESIZE);
    let max_offset = TRAIN_RESIZE - TRAIN_CROP;
    let y0 = rng.random_range(0..=max_offset);
    let x0 = rng.random_range(0..=max_offset);
    let horizontal: bool = rng.random();
    let vertical: bool = rng.random();
    let image = flip_image(&crop_image(&image, y0, x0, TRAIN_CROP), horizontal, vertical);
    let mask = flip_mask(&crop_mask(&mask, y0, x0, TRAIN_CROP), horizontal, vertical);
    Sample { image, mask }
}

/// Flip-only augmentation: independent 50% horizontal and vertical flips
/// without resizing or cropping, for datasets whose images are already at
/// the training resolution.
pub fn flip_transform<S: Scalar>(sample: &Sample<S>, seed: u64) -> Sample<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizontal: bool = rng.random();
    let vertical: bool = rng.random();
    Sample {
        image: flip_image(&sample.image, horizontal, vertical),
        mask: flip_mask(&sample.mask, horizontal, vertical),
    }
}

/// Salt-and-pepper corruption: `floor(rho * H * W)` distinct pixels chosen
/// uniformly; half become 1.0 and half 0.0, with the odd pixel going to
/// salt. Applied to raw gray values, before normalization.
pub fn salt_pepper<S: Scalar>(image: &Tensor<S>, rho: f64, seed: u64) -> Result<Tensor<S>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("noise fraction {rho} outside [0, 1]")));
    }
    let [n, c, h, w] = image.shape();
    if n != 1 || c != 1 {
        return Err(Error::Shape(format!("salt_pepper expects [1, 1, H, W], got {:?}", image.shape())));
    }
    let mut out = image.clone();
    let count = (rho * (h * w) as f64) as usize;
    if count == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, h * w, count);
    let salt = count - count / 2;
    let data = out.data_mut();
    for (i, idx) in picks.into_iter().enumerate() {
        data[idx] = if i < salt { S::one() } else { S::zero() };
    }
    Ok(out)
}

/// Binarizes a gray mask image at half its maximum value; foreground where
/// `v >= 0.5 * max`. An all-zero image maps to an all-background mask.
pub fn binarize_gt<S: Scalar>(mask_image: &Tensor<S>) -> Result<GroundTruthMask> {
    let [n, c, h, w] = mask_image.shape();
    if n != 1 || c != 1 {
        return Err(Error::Shape(format!("mask image must be [1, 1, H, W], got {:?}", mask_image.shape())));
    }
    let max = mask_image.data().iter().map(|v| v.as_f64()).fold(0.0f64, f64::max);
    let values: Vec<bool> = if max <= 0.0 {
        vec![false; h * w]
    } else {
        let threshold = 0.5 * max;
        mask_image.data().iter().map(|v| v.as_f64() >= threshold).collect()
    };
    GroundTruthMask::new(h, w, values)
}

/// Defect families the synthetic generator can draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefectKind {
    Scratch,
    Patch,
    Inclusion,
    None,
}

impl DefectKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DefectKind::Scratch => "scratch",
            DefectKind::Patch => "patch",
            DefectKind::Inclusion => "inclusion",
            DefectKind::None => "none",
        }
    }
}

impl core::str::FromStr for DefectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(DefectKind::Scratch),
            "patch" => Ok(DefectKind::Patch),
            "inclusion" => Ok(DefectKind::Inclusion),
            "none" => Ok(DefectKind::None),
            other => Err(Error::Config(format!("unknown defect kind {other:?}"))),
        }
    }
}

impl core::fmt::Display for DefectKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Background textures for synthetic samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundKind {
    Flat,
    Grating,
    Blobs,
}

impl BackgroundKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackgroundKind::Flat => "flat",
            BackgroundKind::Grating => "grating",
            BackgroundKind::Blobs => "blobs",
        }
    }
}

impl core::str::FromStr for BackgroundKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(BackgroundKind::Flat),
            "grating" => Ok(BackgroundKind::Grating),
            "blobs" => Ok(BackgroundKind::Blobs),
            other => Err(Error::Config(format!("unknown background kind {other:?}"))),
        }
    }
}

impl core::fmt::Display for BackgroundKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full recipe for one synthetic sample. Equal specs generate bitwise
/// identical samples; the mask depends on everything except `contrast`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub image_size: usize,
    pub defect_kind: DefectKind,
    /// Gray offset scale of the defect against its background, in (0, 1].
    pub contrast: f64,
    pub background: BackgroundKind,
    /// Salt-and-pepper fraction in [0, 1]; 0 disables corruption.
    pub noise_rho: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Config(format!("image_size {} is below the minimum of 16", self.image_size)));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(Error::Config(format!("contrast {} outside (0, 1]", self.contrast)));
        }
        if !(0.0..=1.0).contains(&self.noise_rho) {
            return Err(Error::Config(format!("noise_rho {} outside [0, 1]", self.noise_rho)));
        }
        Ok(())
    }
}

const TAU: f64 = 2.0 * core::f64::consts::PI;

fn flat_background<R: Rng>(rng: &mut R, s: usize) -> Vec<f64> {
    let level = 0.35 + 0.3 * rng.random::<f64>();
    vec![level; s * s]
}

fn grating_background<R: Rng>(rng: &mut R, s: usize) -> Vec<f64> {
    let level = 0.35 + 0.3 * rng.random::<f64>();
    let amplitude = 0.05 + 0.05 * rng.random::<f64>();
    let cycles = 2.0 + 5.0 * rng.random::<f64>();
    let angle = core::f64::consts::PI * rng.random::<f64>();
    let phase = TAU * rng.random::<f64>();
    let (dy, dx) = (sin64(angle), cos64(angle));
    let mut out = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let t = (x as f64 * dx + y as f64 * dy) / s as f64;
            out.push(level + amplitude * sin64(TAU * cycles * t + phase));
        }
    }
    out
}

fn blobs_background<R: Rng>(rng: &mut R, s: usize) -> Vec<f64> {
    let level = 0.35 + 0.3 * rng.random::<f64>();
    let amplitude = 0.06 + 0.04 * rng.random::<f64>();
    const GRID: usize = 8;
    let coarse = Tensor::<f64>::from_fn([1, 1, GRID, GRID], |_, _, _, _| rng.random::<f64>() * 2.0 - 1.0);
    let field = resize_bilinear(&coarse, s, s);
    let peak = field.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    field.data().iter().map(|v| level + amplitude * v / peak).collect()
}

/// Stamps a disk of the given radius onto the support grid.
fn stamp_disk(support: &mut [bool], s: usize, cy: f64, cx: f64, radius: f64) {
    let r = radius.max(0.0);
    let y_lo = (floor64(cy - r).max(0.0)) as usize;
    let y_hi = (ceil64(cy + r) as usize).min(s - 1);
    let x_lo = (floor64(cx - r).max(0.0)) as usize;
    let x_hi = (ceil64(cx + r) as usize).min(s - 1);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            if dy * dy + dx * dx <= r * r {
                support[y * s + x] = true;
            }
        }
    }
}

fn scratch_support<R: Rng>(rng: &mut R, s: usize) -> Vec<bool> {
    let fs = s as f64;
    let min_pixels = s * s / 1000 + 4;
    let mut support = vec![false; s * s];
    for _ in 0..8 {
        support.iter_mut().for_each(|v| *v = false);
        let segments = 3 + rng.random_range(0..3usize);
        let thickness = 1.0 + 2.0 * rng.random::<f64>();
        let radius = thickness / 2.0;
        let mut y = fs * (0.2 + 0.6 * rng.random::<f64>());
        let mut x = fs * (0.2 + 0.6 * rng.random::<f64>());
        let mut angle = TAU * rng.random::<f64>();
        for _ in 0..segments {
            let length = fs / 6.0 + fs / 6.0 * rng.random::<f64>();
            let steps = (2.0 * length) as usize + 1;
            for _ in 0..steps {
                y = (y + 0.5 * sin64(angle)).clamp(1.0, fs - 2.0);
                x = (x + 0.5 * cos64(angle)).clamp(1.0, fs - 2.0);
                stamp_disk(&mut support, s, y, x, radius);
            }
            angle += (rng.random::<f64>() - 0.5) * core::f64::consts::PI / 1.5;
        }
        if support.iter().filter(|&&v| v).count() >= min_pixels {
            break;
        }
    }
    support
}

fn patch_support<R: Rng>(rng: &mut R, s: usize) -> Vec<bool> {
    let fraction = 0.02 + 0.10 * rng.random::<f64>();
    let target = ((fraction * (s * s) as f64) as usize).max(4);
    let mut field: Vec<f64> = (0..s * s).map(|_| rng.random::<f64>()).collect();
    // A few box-blur passes leave smooth lumps whose level sets look like
    // irregular patches.
    for _ in 0..3 {
        let mut next = vec![0.0f64; s * s];
        for y in 0..s {
            for x in 0..s {
                let mut sum = 0.0;
                let mut cnt = 0.0;
                for dy in -2i64..=2 {
                    for dx in -2i64..=2 {
                        let yy = y as i64 + dy;
                        let xx = x as i64 + dx;
                        if yy >= 0 && yy < s as i64 && xx >= 0 && xx < s as i64 {
                            sum += field[(yy * s as i64 + xx) as usize];
                            cnt += 1.0;
                        }
                    }
                }
                next[y * s + x] = sum / cnt;
            }
        }
        field = next;
    }
    let mut order: Vec<usize> = (0..s * s).collect();
    order.sort_by(|&a, &b| field[b].partial_cmp(&field[a]).expect("blurred noise is finite"));
    let mut support = vec![false; s * s];
    for &idx in order.iter().take(target) {
        support[idx] = true;
    }
    support
}

fn inclusion_support<R: Rng>(rng: &mut R, s: usize) -> Vec<bool> {
    let fs = s as f64;
    let count = 1 + rng.random_range(0..4usize);
    let mut support = vec![false; s * s];
    for _ in 0..count {
        let cy = fs * (0.125 + 0.75 * rng.random::<f64>());
        let cx = fs * (0.125 + 0.75 * rng.random::<f64>());
        let a = 2.0 + (fs / 8.0 - 2.0).max(0.0) * rng.random::<f64>();
        let b = 2.0 + (fs / 8.0 - 2.0).max(0.0) * rng.random::<f64>();
        let angle = core::f64::consts::PI * rng.random::<f64>();
        let (sa, ca) = (sin64(angle), cos64(angle));
        let reach = a.max(b);
        let y_lo = (floor64(cy - reach).max(0.0)) as usize;
        let y_hi = (ceil64(cy + reach) as usize).min(s - 1);
        let x_lo = (floor64(cx - reach).max(0.0)) as usize;
        let x_hi = (ceil64(cx + reach) as usize).min(s - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let u = (dx * ca + dy * sa) / a;
                let v = (-dx * sa + dy * ca) / b;
                if u * u + v * v <= 1.0 {
                    support[y * s + x] = true;
                }
            }
        }
    }
    support
}

/// Generates one synthetic sample: textured background, defect support
/// drawn independently of `contrast`, gray offset scaled by `contrast`,
/// then optional salt-and-pepper corruption. The mask is the exact defect
/// support.
pub fn synth_generate<S: Scalar>(spec: &SynthSpec) -> Result<Sample<S>> {
    spec.validate()?;
    let s = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let background = match spec.background {
        BackgroundKind::Flat => flat_background(&mut rng, s),
        BackgroundKind::Grating => grating_background(&mut rng, s),
        BackgroundKind::Blobs => blobs_background(&mut rng, s),
    };
    let support = match spec.defect_kind {
        DefectKind::Scratch => scratch_support(&mut rng, s),
        DefectKind::Patch => patch_support(&mut rng, s),
        DefectKind::Inclusion => inclusion_support(&mut rng, s),
        DefectKind::None => vec![false; s * s],
    };
    let darker: bool = rng.random();
    let magnitude = 0.35 + 0.15 * rng.random::<f64>();
    let noise_seed: u64 = rng.random();

    let offset = if darker { -1.0 } else { 1.0 } * spec.contrast * magnitude;
    let mut pixels = background;
    for (v, &fg) in pixels.iter_mut().zip(&support) {
        if fg {
            *v += offset;
        }
        *v = v.clamp(0.0, 1.0);
    }
    let mut image = Tensor::zeros([1, 1, s, s]);
    for (dst, &v) in image.data_mut().iter_mut().zip(&pixels) {
        *dst = S::from_f64(v);
    }
    if spec.noise_rho > 0.0 {
        image = salt_pepper(&image, spec.noise_rho, noise_seed)?;
    }
    let mask = GroundTruthMask::new(s, s, support)?;
    Sample::new(image, mask)
}
