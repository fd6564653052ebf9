//! Saliency evaluation metrics over predicted maps and binary ground truth.
//!
//! Per-image scores come from [`evaluate_pair`]; dataset-level summaries
//! aggregate through [`MetricAccumulator`]. Ground truths without any
//! foreground are degenerate for the overlap-based scores, so those report
//! `None` instead of a number.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::{exp64, sqrt64, Scalar};
use crate::tensor::Tensor;

/// Number of binarization thresholds on the precision/recall curves.
pub const CURVE_BINS: usize = 256;

/// Beta-squared of the thresholded F-measure curve.
pub const CURVE_BETA_SQ: f64 = 0.3;

/// Distance decay rate for background pixel importance in the weighted
/// F-measure: `ln(1/2) / 5`, so the decaying term halves every five pixels.
pub const IMPORTANCE_DECAY: f64 = -0.138_629_436_111_989_06;

/// Side of the Gaussian dependency kernel used by the weighted F-measure.
const DEPENDENCY_KERNEL: usize = 7;

/// Sigma of the Gaussian dependency kernel.
const DEPENDENCY_SIGMA: f64 = 5.0;

/// A single-channel prediction with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("saliency map must be non-empty, got {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "saliency map {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        for &v in &values {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("saliency value {v} outside [0, 1]")));
            }
        }
        Ok(Self { height, width, values })
    }

    /// Wraps a `[1, 1, H, W]` tensor.
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if n != 1 || c != 1 {
            return Err(Error::Shape(format!("saliency map tensor must be [1, 1, H, W], got {:?}", t.shape())));
        }
        Self::new(h, w, t.data().iter().map(|v| v.as_f64()).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// A binary reference mask. `true` marks foreground (defect) pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
    foreground: usize,
}

impl GroundTruthMask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("ground truth mask must be non-empty, got {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "ground truth mask {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        let foreground = values.iter().filter(|&&v| v).count();
        Ok(Self { height, width, values, foreground })
    }

    /// Wraps a `[1, 1, H, W]` tensor whose entries are exactly 0 or 1.
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if n != 1 || c != 1 {
            return Err(Error::Shape(format!("mask tensor must be [1, 1, H, W], got {:?}", t.shape())));
        }
        let mut values = Vec::with_capacity(h * w);
        for v in t.data() {
            let v = v.as_f64();
            if v == 0.0 {
                values.push(false);
            } else if v == 1.0 {
                values.push(true);
            } else {
                return Err(Error::Config(format!("mask value {v} is not binary")));
            }
        }
        Self::new(h, w, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn foreground_count(&self) -> usize {
        self.foreground
    }

    pub fn is_all_background(&self) -> bool {
        self.foreground == 0
    }

    pub fn is_all_foreground(&self) -> bool {
        self.foreground == self.values.len()
    }

    fn at(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x]
    }

    fn mean(&self) -> f64 {
        self.foreground as f64 / self.values.len() as f64
    }
}

fn check_dims(p: &SaliencyMap, g: &GroundTruthMask) -> Result<()> {
    if p.height != g.height || p.width != g.width {
        return Err(Error::Shape(format!(
            "prediction {}x{} does not match ground truth {}x{}",
            p.height, p.width, g.height, g.width
        )));
    }
    Ok(())
}

/// Mean absolute error between a prediction and the mask read as 0/1.
pub fn mae(p: &SaliencyMap, g: &GroundTruthMask) -> Result<f64> {
    check_dims(p, g)?;
    let sum: f64 = p
        .values
        .iter()
        .zip(&g.values)
        .map(|(&v, &m)| (v - if m { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(sum / p.values.len() as f64)
}

/// Precision, recall and F-measure sampled at the 256 thresholds `i / 255`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurves {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f_beta: Vec<f64>,
}

impl PrCurves {
    /// Maximum of the F-measure curve.
    pub fn max_f(&self) -> f64 {
        self.f_beta.iter().copied().fold(0.0, f64::max)
    }
}

/// Largest threshold index `i` with `v >= i / 255`. The initial estimate is
/// corrected against the exact thresholds so quantized inputs such as
/// `k / 255` always land in bin `k`.
fn threshold_bin(v: f64) -> usize {
    let mut i = (v * 255.0) as isize;
    i = i.clamp(0, 255);
    while i < 255 && v >= (i + 1) as f64 / 255.0 {
        i += 1;
    }
    while i > 0 && v < i as f64 / 255.0 {
        i -= 1;
    }
    i as usize
}

fn f_measure(beta_sq: f64, precision: f64, recall: f64) -> f64 {
    let den = beta_sq * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta_sq) * precision * recall / den
    }
}

/// Threshold sweep of precision, recall and F-measure (beta^2 = 0.3).
///
/// The prediction binarizes as `P >= i / 255`. A threshold where nothing is
/// predicted scores precision 1. Returns `None` for a ground truth without
/// foreground, where recall is undefined.
pub fn pr_and_f_curves(p: &SaliencyMap, g: &GroundTruthMask) -> Result<Option<PrCurves>> {
    check_dims(p, g)?;
    if g.is_all_background() {
        return Ok(None);
    }
    let mut fg_hist = [0u64; CURVE_BINS];
    let mut bg_hist = [0u64; CURVE_BINS];
    for (&v, &m) in p.values.iter().zip(&g.values) {
        let bin = threshold_bin(v);
        if m {
            fg_hist[bin] += 1;
        } else {
            bg_hist[bin] += 1;
        }
    }
    let total_fg = g.foreground as f64;
    let mut precision = vec![0.0; CURVE_BINS];
    let mut recall = vec![0.0; CURVE_BINS];
    let mut f_beta = vec![0.0; CURVE_BINS];
    let mut tp = 0u64;
    let mut fp = 0u64;
    for i in (0..CURVE_BINS).rev() {
        tp += fg_hist[i];
        fp += bg_hist[i];
        let prec = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let rec = tp as f64 / total_fg;
        precision[i] = prec;
        recall[i] = rec;
        f_beta[i] = f_measure(CURVE_BETA_SQ, prec, rec);
    }
    Ok(Some(PrCurves { precision, recall, f_beta }))
}

const DISTANCE_INF: f64 = 1.0e18;

/// One pass of the lower-envelope distance transform:
/// `d[q] = min_p (q - p)^2 + f[p]`.
fn distance_transform_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut hull = vec![0usize; n];
    let mut bounds = vec![0.0f64; n + 1];
    let mut k = 0usize;
    bounds[0] = f64::NEG_INFINITY;
    bounds[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let v = hull[k];
            let s = ((f[q] + (q * q) as f64) - (f[v] + (v * v) as f64)) / (2 * (q - v)) as f64;
            if k > 0 && s <= bounds[k] {
                k -= 1;
            } else {
                k += 1;
                hull[k] = q;
                bounds[k] = s;
                bounds[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while bounds[k + 1] < q as f64 {
            k += 1;
        }
        let v = hull[k];
        let dv = q as isize - v as isize;
        d[q] = (dv * dv) as f64 + f[v];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest
/// foreground pixel. Requires at least one foreground pixel.
fn squared_distance_to_foreground(g: &GroundTruthMask) -> Vec<u64> {
    let (h, w) = (g.height, g.width);
    let mut rowwise = vec![0.0f64; h * w];
    let mut f = vec![0.0f64; w.max(h)];
    let mut d = vec![0.0f64; w.max(h)];
    for y in 0..h {
        for x in 0..w {
            f[x] = if g.at(y, x) { 0.0 } else { DISTANCE_INF };
        }
        distance_transform_1d(&f[..w], &mut d[..w]);
        rowwise[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
    }
    let mut out = vec![0u64; h * w];
    for x in 0..w {
        for y in 0..h {
            f[y] = rowwise[y * w + x];
        }
        distance_transform_1d(&f[..h], &mut d[..h]);
        for y in 0..h {
            debug_assert!(d[y] < DISTANCE_INF / 2.0);
            out[y * w + x] = d[y] as u64;
        }
    }
    out
}

fn integer_sqrt(v: u64) -> u64 {
    let mut r = sqrt64(v as f64) as u64;
    while r * r > v {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    r
}

/// Mean error over every foreground pixel at exactly the nearest distance
/// from `(y, x)`. Averaging over ties keeps the copy independent of scan
/// order, so the measure is invariant under flips of both inputs.
fn nearest_foreground_error(
    e: &[f64],
    g: &GroundTruthMask,
    dist_sq: u64,
    y: usize,
    x: usize,
) -> f64 {
    let (h, w) = (g.height as isize, g.width as isize);
    let (y, x) = (y as isize, x as isize);
    let radius = integer_sqrt(dist_sq) as isize;
    let mut sum = 0.0;
    let mut count = 0usize;
    for dy in -radius..=radius {
        let yy = y + dy;
        if yy < 0 || yy >= h {
            continue;
        }
        let rem = dist_sq - (dy * dy) as u64;
        let dx = integer_sqrt(rem);
        if dx * dx != rem {
            continue;
        }
        let dx = dx as isize;
        let candidates = if dx == 0 { [x, x] } else { [x - dx, x + dx] };
        for (slot, &xx) in candidates.iter().enumerate() {
            if dx == 0 && slot == 1 {
                continue;
            }
            if xx < 0 || xx >= w {
                continue;
            }
            let idx = (yy * w + xx) as usize;
            if g.values[idx] {
                sum += e[idx];
                count += 1;
            }
        }
    }
    debug_assert!(count > 0, "distance transform disagrees with the mask");
    sum / count as f64
}

fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1) as isize;
    let mut i = i.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

fn dependency_kernel() -> [f64; DEPENDENCY_KERNEL * DEPENDENCY_KERNEL] {
    let c = (DEPENDENCY_KERNEL / 2) as f64;
    let mut k = [0.0; DEPENDENCY_KERNEL * DEPENDENCY_KERNEL];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let dy = (i / DEPENDENCY_KERNEL) as f64 - c;
        let dx = (i % DEPENDENCY_KERNEL) as f64 - c;
        *v = exp64(-(dy * dy + dx * dx) / (2.0 * DEPENDENCY_SIGMA * DEPENDENCY_SIGMA));
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Gaussian filtering with reflected borders. Reflection keeps the kernel
/// mass inside the image, so a uniform field stays exactly uniform; zero
/// padding would leak mass at the borders and give the complement
/// prediction a spurious nonzero score.
fn diffuse_errors(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let kernel = dependency_kernel();
    let half = (DEPENDENCY_KERNEL / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..DEPENDENCY_KERNEL {
                let yy = reflect_index(y as isize + ky as isize - half, h);
                for kx in 0..DEPENDENCY_KERNEL {
                    let xx = reflect_index(x as isize + kx as isize - half, w);
                    acc += kernel[ky * DEPENDENCY_KERNEL + kx] * src[yy * w + xx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Weighted F-measure (beta^2 = 1).
///
/// Absolute errors are copied onto the background from the nearest
/// foreground pixel, diffused by a 7x7 Gaussian (sigma 5), taken pointwise
/// minimum with the raw error over the foreground, and weighted on the
/// background by `2 - exp(IMPORTANCE_DECAY * d)` for Euclidean distance `d`
/// to the object. Returns `None` for a ground truth without foreground.
pub fn weighted_fbeta(p: &SaliencyMap, g: &GroundTruthMask) -> Result<Option<f64>> {
    check_dims(p, g)?;
    if g.is_all_background() {
        return Ok(None);
    }
    let (h, w) = (p.height, p.width);
    let e: Vec<f64> = p
        .values
        .iter()
        .zip(&g.values)
        .map(|(&v, &m)| (v - if m { 1.0 } else { 0.0 }).abs())
        .collect();
    let dist_sq = squared_distance_to_foreground(g);
    let mut copied = e.clone();
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            if !g.values[idx] {
                copied[idx] = nearest_foreground_error(&e, g, dist_sq[idx], y, x);
            }
        }
    }
    let diffused = diffuse_errors(&copied, h, w);
    let mut fg_error = 0.0;
    let mut bg_error = 0.0;
    for idx in 0..h * w {
        if g.values[idx] {
            fg_error += e[idx].min(diffused[idx]);
        } else {
            let d = sqrt64(dist_sq[idx] as f64);
            bg_error += e[idx] * (2.0 - exp64(IMPORTANCE_DECAY * d));
        }
    }
    let fg = g.foreground as f64;
    let eps = f64::EPSILON;
    let tp_w = fg - fg_error;
    let recall_w = 1.0 - fg_error / fg;
    let precision_w = tp_w / (eps + tp_w + bg_error);
    Ok(Some(f_measure(1.0, precision_w, recall_w)))
}

fn masked_mean_std(values: &[f64], keep: impl Fn(usize) -> bool) -> (f64, f64) {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &v) in values.iter().enumerate() {
        if keep(i) {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / count as f64;
    if count == 1 {
        return (mean, 0.0);
    }
    let mut sq = 0.0;
    for (i, &v) in values.iter().enumerate() {
        if keep(i) {
            sq += (v - mean) * (v - mean);
        }
    }
    (mean, sqrt64(sq / (count - 1) as f64))
}

fn object_score(mean: f64, std: f64) -> f64 {
    2.0 * mean / (mean * mean + 1.0 + std + f64::EPSILON)
}

fn s_object(p: &SaliencyMap, g: &GroundTruthMask) -> f64 {
    let mu = g.mean();
    let (fg_mean, fg_std) = masked_mean_std(&p.values, |i| g.values[i]);
    let complement: Vec<f64> = p.values.iter().map(|&v| 1.0 - v).collect();
    let (bg_mean, bg_std) = masked_mean_std(&complement, |i| !g.values[i]);
    mu * object_score(fg_mean, fg_std) + (1.0 - mu) * object_score(bg_mean, bg_std)
}

/// Foreground centroid, floored to pixel indices.
fn mask_centroid(g: &GroundTruthMask) -> (usize, usize) {
    let mut sum_y = 0usize;
    let mut sum_x = 0usize;
    for y in 0..g.height {
        for x in 0..g.width {
            if g.at(y, x) {
                sum_y += y;
                sum_x += x;
            }
        }
    }
    (sum_y / g.foreground, sum_x / g.foreground)
}

/// Mean/variance comparison of one region of the prediction against the
/// same region of the mask.
fn region_similarity(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mean_p = p.iter().sum::<f64>() / n;
    let mean_g = g.iter().sum::<f64>() / n;
    let norm = n - 1.0 + f64::EPSILON;
    let mut var_p = 0.0;
    let mut var_g = 0.0;
    let mut cov = 0.0;
    for (&a, &b) in p.iter().zip(g) {
        var_p += (a - mean_p) * (a - mean_p);
        var_g += (b - mean_g) * (b - mean_g);
        cov += (a - mean_p) * (b - mean_g);
    }
    var_p /= norm;
    var_g /= norm;
    cov /= norm;
    let num = 4.0 * mean_p * mean_g * cov;
    let den = (mean_p * mean_p + mean_g * mean_g) * (var_p + var_g);
    if num != 0.0 {
        num / (den + f64::EPSILON)
    } else if den == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(p: &SaliencyMap, g: &GroundTruthMask) -> f64 {
    let (cy, cx) = mask_centroid(g);
    let (h, w) = (g.height, g.width);
    let row_spans = [(0, cy + 1), (cy + 1, h)];
    let col_spans = [(0, cx + 1), (cx + 1, w)];
    let total_fg = g.foreground as f64;
    let mut score = 0.0;
    for &(y0, y1) in &row_spans {
        for &(x0, x1) in &col_spans {
            if y0 == y1 || x0 == x1 {
                continue;
            }
            let mut pv = Vec::with_capacity((y1 - y0) * (x1 - x0));
            let mut gv = Vec::with_capacity((y1 - y0) * (x1 - x0));
            let mut fg = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    pv.push(p.at(y, x));
                    let m = g.at(y, x);
                    gv.push(if m { 1.0 } else { 0.0 });
                    fg += m as usize;
                }
            }
            if fg == 0 {
                continue;
            }
            score += fg as f64 / total_fg * region_similarity(&pv, &gv);
        }
    }
    score
}

/// Structure measure: object-level and region-level similarity, equally
/// weighted. Region similarity splits the image into four blocks at the
/// mask centroid and weights each block by its share of the foreground.
///
/// Degenerate conventions: a mask with no foreground scores `1 - mean(P)`,
/// a mask with no background scores `mean(P)`.
pub fn s_measure(p: &SaliencyMap, g: &GroundTruthMask) -> Result<f64> {
    check_dims(p, g)?;
    if g.is_all_background() {
        return Ok(1.0 - p.mean());
    }
    if g.is_all_foreground() {
        return Ok(p.mean());
    }
    let s = 0.5 * s_object(p, g) + 0.5 * s_region(p, g);
    Ok(s.max(0.0))
}

/// Enhanced alignment measure.
///
/// Both inputs are centered on their means; the alignment
/// `2 a b / (a^2 + b^2 + 1e-12)` maps through `(1 + xi)^2 / 4` and averages.
/// Degenerate conventions match [`s_measure`].
pub fn e_measure(p: &SaliencyMap, g: &GroundTruthMask) -> Result<f64> {
    check_dims(p, g)?;
    if g.is_all_background() {
        return Ok(1.0 - p.mean());
    }
    if g.is_all_foreground() {
        return Ok(p.mean());
    }
    let mean_p = p.mean();
    let mean_g = g.mean();
    let mut sum = 0.0;
    for (&v, &m) in p.values.iter().zip(&g.values) {
        let a = if m { 1.0 } else { 0.0 } - mean_g;
        let b = v - mean_p;
        let xi = 2.0 * a * b / (a * a + b * b + 1e-12);
        sum += 0.25 * (1.0 + xi) * (1.0 + xi);
    }
    Ok(sum / p.values.len() as f64)
}

/// Every per-image metric for one prediction/ground-truth pair.
#[derive(Debug, Clone)]
pub struct ImageMetrics {
    pub mae: f64,
    pub s_m: f64,
    pub e_m: f64,
    /// `None` when the ground truth has no foreground.
    pub f_w: Option<f64>,
    /// `None` when the ground truth has no foreground.
    pub curves: Option<PrCurves>,
}

/// Computes all metrics for one pair.
pub fn evaluate_pair(p: &SaliencyMap, g: &GroundTruthMask) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        mae: mae(p, g)?,
        s_m: s_measure(p, g)?,
        e_m: e_measure(p, g)?,
        f_w: weighted_fbeta(p, g)?,
        curves: pr_and_f_curves(p, g)?,
    })
}

/// Dataset-level summary. Curves are averaged pointwise over the images
/// that have them; `max_f` is the maximum of the averaged F curve.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub image_count: usize,
    pub mae: f64,
    pub s_m: f64,
    pub e_m: f64,
    /// Mean weighted F over non-degenerate images, if any.
    pub f_w: Option<f64>,
    pub curves: Option<PrCurves>,
    pub max_f: Option<f64>,
}

/// Running aggregation of per-image metrics.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    images: usize,
    mae_sum: f64,
    s_sum: f64,
    e_sum: f64,
    fw_sum: f64,
    fw_images: usize,
    curve_images: usize,
    precision_sum: Vec<f64>,
    recall_sum: Vec<f64>,
    f_sum: Vec<f64>,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, m: &ImageMetrics) {
        self.images += 1;
        self.mae_sum += m.mae;
        self.s_sum += m.s_m;
        self.e_sum += m.e_m;
        if let Some(fw) = m.f_w {
            self.fw_sum += fw;
            self.fw_images += 1;
        }
        if let Some(curves) = &m.curves {
            if self.curve_images == 0 {
                self.precision_sum = vec![0.0; CURVE_BINS];
                self.recall_sum = vec![0.0; CURVE_BINS];
                self.f_sum = vec![0.0; CURVE_BINS];
            }
            self.curve_images += 1;
            for i in 0..CURVE_BINS {
                self.precision_sum[i] += curves.precision[i];
                self.recall_sum[i] += curves.recall[i];
                self.f_sum[i] += curves.f_beta[i];
            }
        }
    }

    pub fn image_count(&self) -> usize {
        self.images
    }

    pub fn report(&self) -> Result<MetricReport> {
        if self.images == 0 {
            return Err(Error::Config("no images accumulated".into()));
        }
        let n = self.images as f64;
        let curves = if self.curve_images > 0 {
            let k = self.curve_images as f64;
            Some(PrCurves {
                precision: self.precision_sum.iter().map(|v| v / k).collect(),
                recall: self.recall_sum.iter().map(|v| v / k).collect(),
                f_beta: self.f_sum.iter().map(|v| v / k).collect(),
            })
        } else {
            None
        };
        let max_f = curves.as_ref().map(PrCurves::max_f);
        Ok(MetricReport {
            image_count: self.images,
            mae: self.mae_sum / n,
            s_m: self.s_sum / n,
            e_m: self.e_sum / n,
            f_w: if self.fw_images > 0 { Some(self.fw_sum / self.fw_images as f64) } else { None },
            curves,
            max_f,
        })
    }
}
