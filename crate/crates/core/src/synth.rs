//! Seeded synthetic scenes: value-noise backgrounds with a few filled shapes
//! whose union is the saliency mask.
//!
//! All randomness for a dataset comes from one [`Rng`] stream, consumed in a
//! fixed order (background, then shapes, per image), so a spec fully
//! determines every byte.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::data::RgbImage;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Triangle,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Triangle => "triangle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ellipse" => Ok(ShapeKind::Ellipse),
            "rectangle" => Ok(ShapeKind::Rectangle),
            "triangle" => Ok(ShapeKind::Triangle),
            _ => Err(Error::invalid("synth_spec", format!("unknown shape `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub kinds: Vec<ShapeKind>,
    pub octaves: usize,
    /// Range of the per-channel colour offset between shape and background.
    pub contrast_min: f64,
    pub contrast_max: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            count: 200,
            size: 224,
            shapes_min: 1,
            shapes_max: 3,
            kinds: alloc::vec![ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Triangle],
            octaves: 3,
            contrast_min: 0.25,
            contrast_max: 0.6,
        }
    }
}

/// Masks must cover this fraction of the image.
pub const FOREGROUND_RANGE: (f64, f64) = (0.02, 0.6);
pub const MAX_RETRIES: usize = 16;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::invalid("synth_spec", r));
        if self.count == 0 {
            return bad("count must be at least 1");
        }
        if self.size < 8 {
            return bad("size must be at least 8");
        }
        if self.shapes_min == 0 || self.shapes_min > self.shapes_max {
            return bad("shape count range must be non-empty and start at 1 or more");
        }
        if self.kinds.is_empty() {
            return bad("at least one shape kind is required");
        }
        if !(0.0..=1.0).contains(&self.contrast_min) || !(self.contrast_min..=1.0).contains(&self.contrast_max) {
            return bad("contrast range must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kinds: Vec<_> = self.kinds.iter().map(|k| k.name()).collect();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "count = {}", self.count);
        let _ = writeln!(s, "size = {}", self.size);
        let _ = writeln!(s, "shapes = {},{}", self.shapes_min, self.shapes_max);
        let _ = writeln!(s, "kinds = {}", kinds.join(","));
        let _ = writeln!(s, "octaves = {}", self.octaves);
        let _ = writeln!(s, "contrast = {},{}", self.contrast_min, self.contrast_max);
        s
    }

    /// `key = value` lines; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("synth spec line {}: expected `key = value`", no + 1)))?;
            spec.set(k.trim(), v.trim())
                .map_err(|e| Error::Malformed(format!("synth spec line {}: {e}", no + 1)))?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::invalid("synth_spec", format!("bad value `{value}` for `{key}`"));
        let pair = || value.split_once(',').map(|(a, b)| (a.trim(), b.trim())).ok_or_else(bad);
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "count" => self.count = value.parse().map_err(|_| bad())?,
            "size" => self.size = value.parse().map_err(|_| bad())?,
            "octaves" => self.octaves = value.parse().map_err(|_| bad())?,
            "shapes" => {
                let (a, b) = pair()?;
                self.shapes_min = a.parse().map_err(|_| bad())?;
                self.shapes_max = b.parse().map_err(|_| bad())?;
            }
            "contrast" => {
                let (a, b) = pair()?;
                self.contrast_min = a.parse().map_err(|_| bad())?;
                self.contrast_max = b.parse().map_err(|_| bad())?;
            }
            "kinds" => self.kinds = value.split(',').map(|k| ShapeKind::parse(k.trim())).collect::<Result<_>>()?,
            _ => return Err(Error::invalid("synth_spec", format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

/// One generated scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthItem {
    pub image: RgbImage,
    /// 0 or 255 per pixel.
    pub mask: Vec<u8>,
}

impl SynthItem {
    pub fn foreground_fraction(&self) -> f64 {
        self.mask.iter().filter(|v| **v != 0).count() as f64 / self.mask.len() as f64
    }
}

/// Smooth noise in `[0, 1]`: sum of bilinearly interpolated random lattices
/// with doubling frequency and halving amplitude.
fn value_noise(rng: &mut Rng, size: usize, octaves: usize) -> Vec<f64> {
    let mut out = alloc::vec![0.0; size * size];
    let mut amp = 1.0;
    let mut total = 0.0;
    for o in 0..octaves.max(1) {
        let cells = 2usize << o;
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.next_f64()).collect();
        let at = |gy: usize, gx: usize| lattice[gy * (cells + 1) + gx];
        for y in 0..size {
            let fy = y as f64 * cells as f64 / (size - 1) as f64;
            let gy = (fy as usize).min(cells - 1);
            let ty = fy - gy as f64;
            for x in 0..size {
                let fx = x as f64 * cells as f64 / (size - 1) as f64;
                let gx = (fx as usize).min(cells - 1);
                let tx = fx - gx as f64;
                let top = at(gy, gx) * (1.0 - tx) + at(gy, gx + 1) * tx;
                let bot = at(gy + 1, gx) * (1.0 - tx) + at(gy + 1, gx + 1) * tx;
                out[y * size + x] += amp * (top * (1.0 - ty) + bot * ty);
            }
        }
        total += amp;
        amp *= 0.5;
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, cos: f64, sin: f64 },
    Rectangle { y0: f64, x0: f64, y1: f64, x1: f64 },
    Triangle { p: [(f64, f64); 3] },
}

impl Shape {
    fn random(kind: ShapeKind, rng: &mut Rng, size: f64) -> Shape {
        match kind {
            ShapeKind::Ellipse => {
                let ry = rng.uniform(0.08, 0.3) * size;
                let rx = rng.uniform(0.08, 0.3) * size;
                let theta = rng.uniform(0.0, core::f64::consts::PI);
                Shape::Ellipse {
                    cy: rng.uniform(0.2, 0.8) * size,
                    cx: rng.uniform(0.2, 0.8) * size,
                    ry,
                    rx,
                    cos: libm::cos(theta),
                    sin: libm::sin(theta),
                }
            }
            ShapeKind::Rectangle => {
                let h = rng.uniform(0.15, 0.55) * size;
                let w = rng.uniform(0.15, 0.55) * size;
                let y0 = rng.uniform(0.05 * size, 0.95 * size - h);
                let x0 = rng.uniform(0.05 * size, 0.95 * size - w);
                Shape::Rectangle { y0, x0, y1: y0 + h, x1: x0 + w }
            }
            ShapeKind::Triangle => {
                let cy = rng.uniform(0.25, 0.75) * size;
                let cx = rng.uniform(0.25, 0.75) * size;
                let r = rng.uniform(0.15, 0.35) * size;
                let base = rng.uniform(0.0, core::f64::consts::TAU);
                let mut p = [(0.0, 0.0); 3];
                for (i, v) in p.iter_mut().enumerate() {
                    let a = base + i as f64 * core::f64::consts::TAU / 3.0 + rng.uniform(-0.4, 0.4);
                    *v = (cy + r * libm::sin(a), cx + r * libm::cos(a));
                }
                Shape::Triangle { p }
            }
        }
    }

    /// Whether the pixel centre `(y, x)` lies inside.
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx, cos, sin } => {
                let (dy, dx) = (y - cy, x - cx);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (u / rx) * (u / rx) + (v / ry) * (v / ry) <= 1.0
            }
            Shape::Rectangle { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Triangle { p } => {
                let edge = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) * (y - a.0) - (b.0 - a.0) * (x - a.1);
                let d = [edge(p[0], p[1]), edge(p[1], p[2]), edge(p[2], p[0])];
                d.iter().all(|v| *v >= 0.0) || d.iter().all(|v| *v <= 0.0)
            }
        }
    }
}

fn to_byte(v: f64) -> u8 {
    libm::floor(v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8
}

fn attempt(spec: &SynthSpec, rng: &mut Rng) -> SynthItem {
    let n = spec.size;
    let bg: Vec<Vec<f64>> = (0..3).map(|_| value_noise(rng, n, spec.octaves)).collect();
    // squeeze the background into a mid band so shapes can stand out either way
    let base: [f64; 3] = core::array::from_fn(|_| rng.uniform(0.3, 0.7));
    let mut pixels = alloc::vec![0u8; n * n * 3];
    let mut fg = alloc::vec![false; n * n];
    let mut colour = [[0.0; 3]; 8];
    let shapes = rng.range_inclusive(spec.shapes_min as u64, spec.shapes_max as u64) as usize;
    let mut placed = Vec::with_capacity(shapes);
    for i in 0..shapes {
        let kind = spec.kinds[rng.below(spec.kinds.len() as u64) as usize];
        placed.push(Shape::random(kind, rng, n as f64));
        let offset = rng.uniform(spec.contrast_min, spec.contrast_max);
        let sign = if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
        for (c, b) in base.iter().enumerate() {
            let jitter = rng.uniform(-0.1, 0.1);
            colour[i % 8][c] = (b + sign * offset + jitter).clamp(0.0, 1.0);
        }
    }
    for y in 0..n {
        for x in 0..n {
            let i = y * n + x;
            let hit = placed.iter().rposition(|s| s.contains(y as f64 + 0.5, x as f64 + 0.5));
            for c in 0..3 {
                let noise = bg[c][i] - 0.5;
                let v = match hit {
                    Some(k) => colour[k % 8][c] + 0.15 * noise,
                    None => base[c] + 0.5 * noise,
                };
                pixels[i * 3 + c] = to_byte(v);
            }
            fg[i] = hit.is_some();
        }
    }
    SynthItem {
        image: RgbImage {
            height: n,
            width: n,
            pixels,
        },
        mask: fg.iter().map(|b| if *b { 255 } else { 0 }).collect(),
    }
}

/// Bright centred square on a flat background, used when every attempt
/// misses the foreground range.
fn fallback(size: usize) -> SynthItem {
    let lo = size * 3 / 10;
    let hi = size - lo;
    let inside = |i: usize| (lo..hi).contains(&(i / size)) && (lo..hi).contains(&(i % size));
    SynthItem {
        image: RgbImage {
            height: size,
            width: size,
            pixels: (0..size * size).flat_map(|i| [if inside(i) { 220 } else { 60 }; 3]).collect(),
        },
        mask: (0..size * size).map(|i| if inside(i) { 255 } else { 0 }).collect(),
    }
}

/// Next scene from the stream, retrying until the foreground fraction is
/// within [`FOREGROUND_RANGE`].
pub fn generate_one(spec: &SynthSpec, rng: &mut Rng) -> SynthItem {
    for _ in 0..MAX_RETRIES {
        let item = attempt(spec, rng);
        let f = item.foreground_fraction();
        if (FOREGROUND_RANGE.0..=FOREGROUND_RANGE.1).contains(&f) {
            return item;
        }
    }
    fallback(spec.size)
}

/// Every scene of `spec`, in order.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthItem>> {
    spec.validate()?;
    let mut rng = Rng::seed(spec.seed);
    Ok((0..spec.count).map(|_| generate_one(spec, &mut rng)).collect())
}
