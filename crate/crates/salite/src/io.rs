//! Loading images and masks at network resolution, and writing maps.

use std::fs;
use std::path::Path;

use salite_core::data::{binarize, preprocess_image, resize_nearest, Sample};
use salite_core::metrics::{quantize, Mask, SaliencyMap};
use salite_core::Tensor;

use crate::error::{AppError, Result};
use crate::pnm::{self, GrayImage, Pnm};

pub fn read_pnm(path: &Path) -> Result<Pnm> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    pnm::decode(&bytes).map_err(|e| AppError::Image {
        path: path.into(),
        offset: e.offset,
        reason: e.reason,
    })
}

fn read_gray(path: &Path) -> Result<GrayImage> {
    match read_pnm(path)? {
        Pnm::Gray(g) => Ok(g),
        Pnm::Rgb(_) => Err(AppError::Image {
            path: path.into(),
            offset: 0,
            reason: "expected a PGM (P5) file".into(),
        }),
    }
}

/// Normalized `[3, size, size]` input.
pub fn load_image(path: &Path, size: usize) -> Result<Tensor<f32>> {
    Ok(preprocess_image(&read_pnm(path)?.into_rgb(), size))
}

/// Binary mask thresholded at 128, resized nearest-neighbour to `size x size`.
pub fn load_mask(path: &Path, size: usize) -> Result<Mask> {
    let g = read_gray(path)?;
    let values = resize_nearest(&binarize(&g.pixels), g.height, g.width, size, size);
    Ok(Mask::new(size, size, values)?)
}

pub fn load_sample(image: &Path, mask: &Path, size: usize) -> Result<Sample> {
    let img = read_pnm(image)?.into_rgb();
    let g = read_gray(mask)?;
    Ok(Sample::new(&img, &g.pixels, g.height, g.width, size)?)
}

/// Saliency map stored by a previous `save_map`, values `byte / 255`.
pub fn load_map(path: &Path) -> Result<SaliencyMap> {
    let g = read_gray(path)?;
    Ok(SaliencyMap::new(g.height, g.width, g.pixels.iter().map(|b| *b as f32 / 255.0).collect())?)
}

/// 8-bit PGM with `round(255 s)`, halves rounded up.
pub fn save_map(map: &SaliencyMap, path: &Path) -> Result<()> {
    let img = GrayImage {
        height: map.height,
        width: map.width,
        pixels: map.values.iter().map(|v| quantize(*v)).collect(),
    };
    write_file(path, &pnm::encode_pgm(&img))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use salite_core::data::RgbImage;

    fn gray(dir: &Path, name: &str, h: usize, w: usize, px: Vec<u8>) -> std::path::PathBuf {
        let p = dir.join(name);
        write_file(&p, &pnm::encode_pgm(&GrayImage { height: h, width: w, pixels: px })).unwrap();
        p
    }

    #[test]
    fn white_ppm_normalizes_per_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ppm");
        write_file(&p, &pnm::encode_ppm(&RgbImage::new(2, 2, vec![255; 12]).unwrap())).unwrap();
        let t = load_image(&p, 4).unwrap();
        assert_eq!(t.shape(), &[3, 4, 4]);
        let want = [2.2489, 2.4286, 2.64];
        for (c, plane) in t.data().chunks(16).enumerate() {
            assert!(plane.iter().all(|v| (v - want[c]).abs() < 1e-3), "{c}: {plane:?}");
        }
    }

    #[test]
    fn mask_threshold_and_decimation() {
        let dir = tempfile::tempdir().unwrap();
        let p = gray(dir.path(), "m.pgm", 1, 2, vec![127, 128]);
        assert_eq!(load_mask(&p, 1).unwrap().values.len(), 1);
        let m = load_mask(&p, 2).unwrap();
        assert_eq!(m.values, vec![false, true, false, true]);
        // 8x8 checkerboard of 2x2 blocks -> 4x4 checkerboard
        let board: Vec<u8> = (0..64).map(|i| if ((i % 8) / 2 + (i / 16)) % 2 == 0 { 255 } else { 0 }).collect();
        let p = gray(dir.path(), "c.pgm", 8, 8, board);
        let m = load_mask(&p, 4).unwrap();
        let want: Vec<bool> = (0..16).map(|i| (i % 4 + i / 4) % 2 == 0).collect();
        assert_eq!(m.values, want);
    }

    #[test]
    fn saved_maps_reload_within_half_a_level() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.pgm");
        let values: Vec<f32> = (0..100).map(|i| i as f32 / 99.0).collect();
        let map = SaliencyMap::new(10, 10, values.clone()).unwrap();
        save_map(&map, &p).unwrap();
        let back = load_map(&p).unwrap();
        for (a, b) in values.iter().zip(&back.values) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
        }
        save_map(&SaliencyMap::new(1, 3, vec![0.5, 0.0, 1.0]).unwrap(), &p).unwrap();
        assert!(fs::read(&p).unwrap().ends_with(&[128, 0, 255]));
    }

    #[test]
    fn mask_must_be_gray() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ppm");
        write_file(&p, &pnm::encode_ppm(&RgbImage::new(1, 1, vec![0; 3]).unwrap())).unwrap();
        assert!(matches!(load_mask(&p, 1), Err(AppError::Image { .. })));
        assert!(matches!(load_mask(&dir.path().join("none.pgm"), 1), Err(AppError::Io { .. })));
    }
}
