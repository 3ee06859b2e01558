//! Patch-wise balanced cross-entropy with a boundary weight map, patch-wise
//! Huber loss, and their weighted sum.
//!
//! Every loss term here is a weighted sum over pixels, so the per-pixel
//! weights (class balance, boundary emphasis, patch and batch averaging) are
//! computed once from the ground truth and handed to the tape ops.
//!
//! Boundary weight: `w(x) = w0 * exp(-(d1 + d2)^2 / (2 sigma^2))`, where `d1`
//! and `d2` are the Euclidean distances from `x` to the border of the nearest
//! and second-nearest 4-connected foreground component. A border pixel is a
//! foreground pixel with a 4-neighbour inside the image that is background.
//! With a single component `d2 = d1`; with none, `w = 0`.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tape, Var};

/// Squared distances above this are "no feature in reach".
const FAR: f64 = 1e20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w0: f64,
    pub sigma: f64,
    pub delta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub patch: usize,
    /// Add the boundary term to the BCE instead of scaling it (no gradient).
    pub strict: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w0: 0.6,
            sigma: 5.0,
            delta: 1.0,
            lambda1: 0.6,
            lambda2: 0.4,
            patch: 5,
            strict: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.sigma, self.delta, self.lambda1, self.lambda2];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !(self.w0.is_finite() && self.w0 >= 0.0) {
            return Err(Error::invalid("loss_weights", "weights must be finite and positive"));
        }
        if (self.lambda1 + self.lambda2 - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("loss_weights", "lambda1 + lambda2 must equal 1"));
        }
        if self.patch == 0 {
            return Err(Error::invalid("loss_weights", "patch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Tile {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn pixels(self, stride: usize) -> impl Iterator<Item = usize> {
        (self.row..self.row + self.height).flat_map(move |y| (self.col..self.col + self.width).map(move |x| y * stride + x))
    }
}

/// Row-major tiling into `patch x patch` squares; the last row/column of
/// tiles is cut short when the extent is not a multiple of `patch`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch: usize) -> Self {
        PatchGrid { height, width, patch }
    }

    pub fn rows(&self) -> usize {
        self.height.div_ceil(self.patch)
    }

    pub fn cols(&self) -> usize {
        self.width.div_ceil(self.patch)
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tiles(&self) -> impl Iterator<Item = Tile> + '_ {
        let p = self.patch;
        (0..self.rows()).flat_map(move |r| {
            (0..self.cols()).map(move |c| Tile {
                row: r * p,
                col: c * p,
                height: p.min(self.height - r * p),
                width: p.min(self.width - c * p),
            })
        })
    }
}

/// 1-D squared distance transform of a sampled function (lower envelope of
/// parabolas). `f` is overwritten with the result.
fn edt_1d(f: &mut [f64], v: &mut [usize], z: &mut [f64], out: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0: replace the only parabola
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
            }
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
    f.copy_from_slice(out);
}

/// Exact Euclidean distance from every pixel to the nearest `true` pixel;
/// `f64::INFINITY` everywhere when there is none.
pub fn distance_transform(feature: &[bool], height: usize, width: usize) -> Vec<f64> {
    assert_eq!(feature.len(), height * width, "distance_transform: size mismatch");
    if !feature.iter().any(|b| *b) {
        return vec![f64::INFINITY; feature.len()];
    }
    let mut d: Vec<f64> = feature.iter().map(|b| if *b { 0.0 } else { FAR }).collect();
    let n = height.max(width);
    let (mut v, mut z, mut buf, mut out) = (vec![0usize; n], vec![0.0; n + 1], vec![0.0; n], vec![0.0; n]);
    for x in 0..width {
        for y in 0..height {
            buf[y] = d[y * width + x];
        }
        edt_1d(&mut buf[..height], &mut v, &mut z, &mut out[..height]);
        for y in 0..height {
            d[y * width + x] = buf[y];
        }
    }
    for row in d.chunks_mut(width) {
        edt_1d(row, &mut v, &mut z, &mut out[..width]);
    }
    d.iter().map(|s| s.sqrt()).collect()
}

/// 4-connected foreground components; `labels[i]` is `Some(component)`.
pub fn components(mask: &[bool], height: usize, width: usize) -> (Vec<Option<usize>>, usize) {
    let mut labels = vec![None; mask.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(count);
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / width, i % width);
            let mut visit = |j: usize| {
                if mask[j] && labels[j].is_none() {
                    labels[j] = Some(count);
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
        }
        count += 1;
    }
    (labels, count)
}

/// Foreground pixels with an in-image 4-neighbour in the background.
pub fn border_pixels(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    (0..mask.len())
        .map(|i| {
            if !mask[i] {
                return false;
            }
            let (y, x) = (i / width, i % width);
            (y > 0 && !mask[i - width]) || (y + 1 < height && !mask[i + width]) || (x > 0 && !mask[i - 1]) || (x + 1 < width && !mask[i + 1])
        })
        .collect()
}

/// Distances to the nearest and second-nearest component border.
pub fn border_distances(mask: &[bool], height: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let (labels, count) = components(mask, height, width);
    let border = border_pixels(mask, height, width);
    let mut d1 = vec![f64::INFINITY; mask.len()];
    let mut d2 = vec![f64::INFINITY; mask.len()];
    let mut seen = 0;
    for comp in 0..count {
        let feature: Vec<bool> = (0..mask.len()).map(|i| border[i] && labels[i] == Some(comp)).collect();
        if !feature.iter().any(|b| *b) {
            continue;
        }
        seen += 1;
        for (i, d) in distance_transform(&feature, height, width).into_iter().enumerate() {
            if d < d1[i] {
                d2[i] = d1[i];
                d1[i] = d;
            } else if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    if seen < 2 {
        d2.clone_from(&d1);
    }
    (d1, d2)
}

/// Per-pixel boundary weight `w(x)`.
pub fn boundary_weight_map(mask: &[bool], height: usize, width: usize, w0: f64, sigma: f64) -> Vec<f64> {
    let (d1, d2) = border_distances(mask, height, width);
    d1.iter()
        .zip(&d2)
        .map(|(a, b)| {
            let s = a + b;
            if s.is_finite() {
                w0 * libm::exp(-(s * s) / (2.0 * sigma * sigma))
            } else {
                0.0
            }
        })
        .collect()
}

/// Ground truth for a batch with every per-pixel loss weight precomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTargets<T> {
    pub target: Vec<T>,
    pub bce_weight: Vec<T>,
    pub huber_weight: Vec<T>,
    /// Boundary term added as a constant in strict mode, else zero.
    pub strict_offset: f64,
    pub weights: LossWeights,
}

impl<T: Real> LossTargets<T> {
    /// `masks` are binary `height x width` maps, one per batch item.
    pub fn new(masks: &[Vec<bool>], height: usize, width: usize, weights: &LossWeights) -> Result<Self> {
        let boundary: Vec<Vec<f64>> = masks.iter().map(|m| boundary_weight_map(m, height, width, weights.w0, weights.sigma)).collect();
        Self::with_boundary(masks, &boundary, height, width, weights)
    }

    /// Same as [`LossTargets::new`] with an explicit boundary map per item.
    pub fn with_boundary(masks: &[Vec<bool>], boundary: &[Vec<f64>], height: usize, width: usize, weights: &LossWeights) -> Result<Self> {
        weights.validate()?;
        if masks.is_empty() || masks.len() != boundary.len() {
            return Err(Error::invalid("loss_targets", "need one boundary map per mask and at least one mask"));
        }
        let grid = PatchGrid::new(height, width, weights.patch);
        let per = height * width;
        let batch = masks.len() as f64;
        let patches = grid.len() as f64;
        let mut target = Vec::with_capacity(per * masks.len());
        let mut bce = vec![T::zero(); per * masks.len()];
        let mut hub = vec![T::zero(); per * masks.len()];
        let mut strict_offset = 0.0;
        for (item, (mask, w)) in masks.iter().zip(boundary).enumerate() {
            if mask.len() != per || w.len() != per {
                return Err(Error::Dim {
                    op: "loss_targets",
                    what: "mask pixels",
                    expected: per,
                    got: mask.len().min(w.len()),
                });
            }
            target.extend(mask.iter().map(|b| if *b { T::one() } else { T::zero() }));
            let base = item * per;
            for tile in grid.tiles() {
                let n = tile.area() as f64;
                let pos = tile.pixels(width).filter(|&i| mask[i]).count() as f64;
                let neg = n - pos;
                let scale = 1.0 / (n * patches * batch);
                let mut wsum = 0.0;
                for i in tile.pixels(width) {
                    let balance = if mask[i] { neg / n } else { pos / n };
                    let boost = if weights.strict { 1.0 } else { 1.0 + w[i] };
                    bce[base + i] = T::from_f64(balance * boost * scale);
                    hub[base + i] = T::from_f64(scale);
                    wsum += w[i];
                }
                if weights.strict {
                    strict_offset += wsum * scale;
                }
            }
        }
        Ok(LossTargets {
            target,
            bce_weight: bce,
            huber_weight: hub,
            strict_offset,
            weights: *weights,
        })
    }
}

/// The two loss terms and their combination, all scalars on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub bce: Var,
    pub huber: Var,
    pub total: Var,
}

/// Class-balanced, boundary-weighted BCE averaged within patches, then over
/// patches, then over the batch.
pub fn balanced_bce_patch<T: Real>(tape: &mut Tape<T>, s: Var, t: &LossTargets<T>) -> Result<Var> {
    let bce = tape.weighted_bce(s, t.target.clone(), t.bce_weight.clone())?;
    Ok(if t.weights.strict {
        tape.add_const(bce, T::from_f64(t.strict_offset))
    } else {
        bce
    })
}

/// Huber loss averaged within patches, then over patches and batch.
pub fn huber_patch<T: Real>(tape: &mut Tape<T>, s: Var, t: &LossTargets<T>) -> Result<Var> {
    tape.weighted_huber(s, t.target.clone(), t.huber_weight.clone(), T::from_f64(t.weights.delta))
}

/// `lambda1 * BCE + lambda2 * Huber`.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, s: Var, t: &LossTargets<T>) -> Result<LossTerms> {
    let bce = balanced_bce_patch(tape, s, t)?;
    let huber = huber_patch(tape, s, t)?;
    let a = tape.scale(bce, T::from_f64(t.weights.lambda1));
    let b = tape.scale(huber, T::from_f64(t.weights.lambda2));
    let total = tape.add(a, b)?;
    Ok(LossTerms { bce, huber, total })
}
