//! Saliency evaluation: threshold-swept precision/recall, F-measure
//! (`beta^2 = 0.3`) and mean absolute error.
//!
//! Saliency values are quantized to `q = floor(255 s + 0.5)` and a pixel is
//! predicted salient at threshold `t` when `q >= t`, for `t` in `0..=255`.
//! Precision is 1 when nothing is predicted salient; recall is 0 when the
//! mask has no salient pixels.

use alloc::vec::Vec;

use crate::{Error, Result};

pub const BETA_SQ: f64 = 0.3;
pub const LEVELS: usize = 256;

/// Saliency map with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Dim {
                op: "saliency_map",
                what: "pixel count",
                expected: height * width,
                got: values.len(),
            });
        }
        Ok(SaliencyMap { height, width, values })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|v| *v as f64).sum::<f64>() / self.values.len().max(1) as f64
    }
}

/// Binary ground truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Dim {
                op: "mask",
                what: "pixel count",
                expected: height * width,
                got: values.len(),
            });
        }
        Ok(Mask { height, width, values })
    }
}

fn same_shape(s: &SaliencyMap, g: &Mask) -> Result<()> {
    if (s.height, s.width) != (g.height, g.width) {
        return Err(Error::Shape {
            op: "metrics",
            shape: alloc::vec![s.height, s.width, g.height, g.width],
            reason: "saliency map and mask differ in size",
        });
    }
    Ok(())
}

/// 255-level quantization with round-half-up.
pub fn quantize(s: f32) -> u8 {
    libm::floor(255.0 * (s as f64).clamp(0.0, 1.0) + 0.5) as u8
}

/// Precision and recall at each threshold `0..=255`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

impl PrCurve {
    pub fn f_measures(&self) -> impl Iterator<Item = f64> + '_ {
        self.precision.iter().zip(&self.recall).map(|(p, r)| f_measure(*p, *r))
    }

    pub fn max_f(&self) -> f64 {
        self.f_measures().fold(0.0, f64::max)
    }
}

pub fn pr_curve(s: &SaliencyMap, g: &Mask) -> Result<PrCurve> {
    same_shape(s, g)?;
    // histograms of quantized levels for positives and negatives
    let mut pos = [0u64; LEVELS];
    let mut neg = [0u64; LEVELS];
    for (v, t) in s.values.iter().zip(&g.values) {
        let q = quantize(*v) as usize;
        if *t {
            pos[q] += 1;
        } else {
            neg[q] += 1;
        }
    }
    let total_pos: u64 = pos.iter().sum();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut precision = alloc::vec![0.0; LEVELS];
    let mut recall = alloc::vec![0.0; LEVELS];
    for t in (0..LEVELS).rev() {
        tp += pos[t];
        fp += neg[t];
        precision[t] = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        recall[t] = if total_pos == 0 { 0.0 } else { tp as f64 / total_pos as f64 };
    }
    Ok(PrCurve { precision, recall })
}

/// `(1 + b2) P R / (b2 P + R)`, 0 when the denominator is 0.
pub fn f_measure(p: f64, r: f64) -> f64 {
    let den = BETA_SQ * p + r;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + BETA_SQ) * p * r / den
    }
}

pub fn mae(s: &SaliencyMap, g: &Mask) -> Result<f64> {
    same_shape(s, g)?;
    let sum: f64 = s
        .values
        .iter()
        .zip(&g.values)
        .map(|(v, t)| (*v as f64 - if *t { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(sum / s.values.len().max(1) as f64)
}

/// F-measure at the binarization threshold `2 * mean(S)`, clamped to `[0, 1]`.
pub fn adaptive_f(s: &SaliencyMap, g: &Mask) -> Result<f64> {
    same_shape(s, g)?;
    let thr = (2.0 * s.mean()).min(1.0);
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for (v, t) in s.values.iter().zip(&g.values) {
        let pred = *v as f64 >= thr;
        match (pred, *t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    Ok(f_measure(p, r))
}

/// Scores of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    pub name: alloc::string::String,
    pub max_f: f64,
    pub adaptive_f: f64,
    pub mae: f64,
}

pub fn score_image(name: &str, s: &SaliencyMap, g: &Mask) -> Result<ImageScores> {
    Ok(ImageScores {
        name: name.into(),
        max_f: pr_curve(s, g)?.max_f(),
        adaptive_f: adaptive_f(s, g)?,
        mae: mae(s, g)?,
    })
}

/// Per-image scores in evaluation order plus their arithmetic means.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: Vec<ImageScores>,
    pub mean_max_f: f64,
    pub mean_adaptive_f: f64,
    pub mean_mae: f64,
}

impl EvalReport {
    pub fn from_images(images: Vec<ImageScores>) -> Self {
        let n = images.len().max(1) as f64;
        let mean = |f: fn(&ImageScores) -> f64| images.iter().map(f).sum::<f64>() / n;
        EvalReport {
            mean_max_f: mean(|s| s.max_f),
            mean_adaptive_f: mean(|s| s.adaptive_f),
            mean_mae: mean(|s| s.mae),
            images,
        }
    }

    pub fn count(&self) -> usize {
        self.images.len()
    }
}
