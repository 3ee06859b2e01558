//! Writing a synthetic dataset to disk.

use std::fs;
use std::path::Path;

use salite_core::rng::Rng;
use salite_core::synth::{generate_one, SynthSpec};

use crate::error::{AppError, Result};
use crate::io::write_file;
use crate::manifest::{format_manifest, load_manifest, Manifest};
use crate::pnm::{encode_pgm, encode_ppm, GrayImage};

/// `images/NNNN.ppm`, `masks/NNNN.pgm` and `manifest.tsv` under `out_dir`.
pub fn synth_generate(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let digits = spec.count.saturating_sub(1).to_string().len().max(4);
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| AppError::io(d, e))?;
    }
    let mut rng = Rng::seed(spec.seed);
    let mut rows = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let item = generate_one(spec, &mut rng);
        let image = format!("images/{i:0digits$}.ppm");
        let mask = format!("masks/{i:0digits$}.pgm");
        write_file(&out_dir.join(&image), &encode_ppm(&item.image))?;
        let gray = GrayImage {
            height: spec.size,
            width: spec.size,
            pixels: item.mask,
        };
        write_file(&out_dir.join(&mask), &encode_pgm(&gray))?;
        rows.push((image, mask));
    }
    let path = out_dir.join("manifest.tsv");
    write_file(&path, format_manifest(&rows).as_bytes())?;
    load_manifest(&path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{load_image, load_mask};
    use salite_core::synth::ShapeKind;

    fn spec(seed: u64) -> SynthSpec {
        SynthSpec {
            seed,
            count: 4,
            size: 24,
            ..SynthSpec::default()
        }
    }

    fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for sub in ["images", "masks"] {
            let mut entries: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
            entries.sort();
            for p in entries {
                out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
            }
        }
        out.push(("manifest".into(), fs::read(dir.join("manifest.tsv")).unwrap()));
        out
    }

    #[test]
    fn same_seed_writes_identical_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        synth_generate(&spec(5), a.path()).unwrap();
        synth_generate(&spec(5), b.path()).unwrap();
        assert_eq!(files(a.path()), files(b.path()));
    }

    #[test]
    fn every_row_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_generate(&spec(6), dir.path()).unwrap();
        assert_eq!(m.len(), 4);
        for row in &m.rows {
            assert_eq!(load_image(&row.image, 24).unwrap().shape(), &[3, 24, 24]);
            let mask = load_mask(&row.mask, 24).unwrap();
            let frac = mask.values.iter().filter(|v| **v).count() as f64 / 576.0;
            assert!((0.02..=0.6).contains(&frac));
        }
    }

    #[test]
    fn single_rectangles_give_box_masks() {
        let dir = tempfile::tempdir().unwrap();
        let s = SynthSpec {
            shapes_min: 1,
            shapes_max: 1,
            kinds: vec![ShapeKind::Rectangle],
            ..spec(7)
        };
        for row in synth_generate(&s, dir.path()).unwrap().rows {
            let m = load_mask(&row.mask, 24).unwrap();
            let on: Vec<(usize, usize)> = (0..576).filter(|i| m.values[*i]).map(|i| (i / 24, i % 24)).collect();
            let (y0, y1) = (on.iter().map(|p| p.0).min().unwrap(), on.iter().map(|p| p.0).max().unwrap());
            let (x0, x1) = (on.iter().map(|p| p.1).min().unwrap(), on.iter().map(|p| p.1).max().unwrap());
            assert_eq!(on.len(), (y1 - y0 + 1) * (x1 - x0 + 1));
        }
    }

    #[test]
    fn invalid_spec_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert!(synth_generate(&SynthSpec { count: 0, ..spec(1) }, &out).is_err());
        assert!(!out.exists());
    }
}
