//! Turning decoded pixels into network inputs and training targets.

use alloc::vec::Vec;

use crate::tape::resize_values;
use crate::{Error, Result, Tensor};

/// Per-channel ImageNet statistics.
pub const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Interleaved 8-bit RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::Dim {
                op: "rgb_image",
                what: "byte count",
                expected: height * width * 3,
                got: pixels.len(),
            });
        }
        Ok(RgbImage { height, width, pixels })
    }

    /// Grey replicated to three channels.
    pub fn from_gray(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        Self::new(height, width, gray.iter().flat_map(|g| [*g; 3]).collect())
    }
}

/// Scale to `[0,1]`, resize bilinearly to `size x size`, then normalize each
/// channel with [`MEAN`] and [`STD`]. Returns `[3, size, size]`.
pub fn preprocess_image(img: &RgbImage, size: usize) -> Tensor<f32> {
    let (h, w) = (img.height, img.width);
    let planar = Tensor::from_fn(&[1, 3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        img.pixels[p * 3 + c] as f32 / 255.0
    });
    let resized = if (h, w) == (size, size) {
        planar
    } else {
        resize_values(&planar, size, size)
    };
    let mut out = resized.reshaped(&[3, size, size]).expect("same element count");
    for (c, plane) in out.data_mut().chunks_mut(size * size).enumerate() {
        for v in plane {
            *v = (*v - MEAN[c]) / STD[c];
        }
    }
    out
}

/// Threshold at 128.
pub fn binarize(gray: &[u8]) -> Vec<bool> {
    gray.iter().map(|v| *v >= 128).collect()
}

/// Nearest-neighbour resize: output `i` reads input `floor((i + 0.5) * in / out)`.
pub fn resize_nearest<T: Copy>(src: &[T], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<T> {
    assert_eq!(src.len(), h * w, "resize_nearest: size mismatch");
    let pick = |i: usize, input: usize, output: usize| (((2 * i + 1) * input) / (2 * output)).min(input - 1);
    let xs: Vec<usize> = (0..out_w).map(|x| pick(x, w, out_w)).collect();
    (0..out_h)
        .flat_map(|y| {
            let sy = pick(y, h, out_h);
            xs.iter().map(move |&sx| src[sy * w + sx])
        })
        .collect()
}

/// Mirror a row-major plane stack left to right.
pub fn flip_horizontal<T: Copy>(data: &mut [T], width: usize) {
    for row in data.chunks_mut(width) {
        row.reverse();
    }
}

/// One training example at network resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[3, S, S]`, normalized.
    pub image: Tensor<f32>,
    /// `S x S` binary mask.
    pub mask: Vec<bool>,
}

impl Sample {
    pub fn new(img: &RgbImage, mask_gray: &[u8], mask_h: usize, mask_w: usize, size: usize) -> Result<Self> {
        if mask_gray.len() != mask_h * mask_w {
            return Err(Error::Dim {
                op: "sample",
                what: "mask pixels",
                expected: mask_h * mask_w,
                got: mask_gray.len(),
            });
        }
        let mask = binarize(mask_gray);
        Ok(Sample {
            image: preprocess_image(img, size),
            mask: resize_nearest(&mask, mask_h, mask_w, size, size),
        })
    }

    pub fn size(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn flipped(&self) -> Sample {
        let s = self.size();
        let mut out = self.clone();
        flip_horizontal(out.image.data_mut(), s);
        flip_horizontal(&mut out.mask, s);
        out
    }
}
