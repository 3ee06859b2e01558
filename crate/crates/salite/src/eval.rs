//! Scoring saliency maps against a manifest.

use std::fmt::Write as _;
use std::path::Path;

use salite_core::metrics::{score_image, EvalReport, ImageScores, SaliencyMap};
use salite_core::model::Salite;
use salite_core::optim::predict;
use salite_core::params::ParamStore;

use crate::error::{AppError, Result};
use crate::io::{load_image, load_map, load_mask};
use crate::manifest::{Manifest, Row};

/// Source of the maps being scored.
pub enum Predictor<'a> {
    Model { model: &'a Salite, params: &'a ParamStore<f32> },
    /// `<dir>/<image stem>.pgm` per row, already at evaluation size.
    Maps(&'a Path),
}

impl Predictor<'_> {
    /// Side length the masks are resized to.
    pub fn size(&self, fallback: usize) -> usize {
        match self {
            Predictor::Model { model, .. } => model.spec.input_size,
            Predictor::Maps(_) => fallback,
        }
    }
}

/// Saliency map of one preprocessed image.
pub fn infer_map(model: &Salite, params: &ParamStore<f32>, image: &Path) -> Result<SaliencyMap> {
    let s = model.spec.input_size;
    let x = load_image(image, s)?;
    let out = predict(model, params, &[&x])?;
    Ok(SaliencyMap::new(s, s, out.into_data())?)
}

fn score_row(row: &Row, predictor: &Predictor<'_>, size: usize) -> Result<ImageScores> {
    let name = row.name();
    let map = match predictor {
        Predictor::Model { model, params } => infer_map(model, params, &row.image)?,
        Predictor::Maps(dir) => {
            let path = dir.join(format!("{name}.pgm"));
            let map = load_map(&path)?;
            if (map.height, map.width) != (size, size) {
                return Err(AppError::Invalid(format!(
                    "{}: map is {}x{}, expected {size}x{size}",
                    path.display(),
                    map.width,
                    map.height
                )));
            }
            map
        }
    };
    let mask = load_mask(&row.mask, size)?;
    Ok(score_image(&name, &map, &mask)?)
}

/// Scores every row at `size x size` on up to `threads` workers; the report
/// keeps manifest order.
pub fn evaluate_dataset(manifest: &Manifest, predictor: &Predictor<'_>, size: usize, threads: usize) -> Result<EvalReport> {
    let rows = &manifest.rows;
    let threads = threads.clamp(1, rows.len().max(1));
    let mut slots: Vec<Option<Result<ImageScores>>> = (0..rows.len()).map(|_| None).collect();
    if threads == 1 {
        for (slot, row) in slots.iter_mut().zip(rows) {
            *slot = Some(score_row(row, predictor, size));
        }
    } else {
        let chunk = rows.len().div_ceil(threads);
        std::thread::scope(|scope| {
            for (slots, rows) in slots.chunks_mut(chunk).zip(rows.chunks(chunk)) {
                scope.spawn(move || {
                    for (slot, row) in slots.iter_mut().zip(rows) {
                        *slot = Some(score_row(row, predictor, size));
                    }
                });
            }
        });
    }
    let images = slots
        .into_iter()
        .zip(rows)
        .map(|(r, row)| r.expect("every row scored").map_err(|e| manifest.row_error(row, e)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_images(images))
}

/// One `name<TAB>maxF<TAB>adaptF<TAB>mae` line.
pub fn format_image(s: &ImageScores) -> String {
    format!("{}\t{:.6}\t{:.6}\t{:.6}", s.name, s.max_f, s.adaptive_f, s.mae)
}

/// Per-image table followed by the dataset summary.
pub fn format_report(report: &EvalReport, dataset: &str) -> String {
    let mut out = String::from("name\tmaxF\tadaptF\tmae\n");
    for s in &report.images {
        out.push_str(&format_image(s));
        out.push('\n');
    }
    out.push('\n');
    out.push_str(&format_summary(report, dataset));
    out
}

/// Dataset-level `F-Score` (max-F) and `MAE` columns.
pub fn format_summary(report: &EvalReport, dataset: &str) -> String {
    let mut out = String::from("dataset\tF-Score\tMAE\tadaptF\timages\n");
    let _ = writeln!(
        out,
        "{dataset}\t{:.4}\t{:.4}\t{:.4}\t{}",
        report.mean_max_f,
        report.mean_mae,
        report.mean_adaptive_f,
        report.count()
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{save_map, write_file};
    use crate::manifest::load_manifest;
    use crate::pnm::{encode_pgm, encode_ppm, GrayImage};
    use salite_core::data::RgbImage;

    /// Two 4x4 rows whose masks cover the left half.
    fn dataset(dir: &Path) -> Manifest {
        let mask: Vec<u8> = (0..16).map(|i| if i % 4 < 2 { 255 } else { 0 }).collect();
        let mut text = String::new();
        for name in ["a", "b"] {
            write_file(&dir.join(format!("{name}.ppm")), &encode_ppm(&RgbImage::new(4, 4, vec![90; 48]).unwrap())).unwrap();
            let g = GrayImage {
                height: 4,
                width: 4,
                pixels: mask.clone(),
            };
            write_file(&dir.join(format!("{name}.pgm")), &encode_pgm(&g)).unwrap();
            text.push_str(&format!("{name}.ppm\t{name}.pgm\n"));
        }
        write_file(&dir.join("m.tsv"), text.as_bytes()).unwrap();
        load_manifest(&dir.join("m.tsv")).unwrap()
    }

    fn maps(dir: &Path, a: f32, b: f32) -> std::path::PathBuf {
        let out = dir.join("maps");
        std::fs::create_dir_all(&out).unwrap();
        for (name, wrong) in [("a", a), ("b", b)] {
            let v: Vec<f32> = (0..16).map(|i| if i % 4 < 2 { 1.0 - wrong } else { wrong }).collect();
            save_map(&SaliencyMap::new(4, 4, v).unwrap(), &out.join(format!("{name}.pgm"))).unwrap();
        }
        out
    }

    #[test]
    fn perfect_maps_score_one_and_zero() {
        let dir = tempfile::tempdir().unwrap();
        let m = dataset(dir.path());
        let out = maps(dir.path(), 0.0, 0.0);
        let r = evaluate_dataset(&m, &Predictor::Maps(&out), 4, 1).unwrap();
        assert_eq!(r.count(), 2);
        assert_eq!((r.mean_max_f, r.mean_mae), (1.0, 0.0));
    }

    #[test]
    fn means_are_arithmetic_and_threads_keep_order() {
        let dir = tempfile::tempdir().unwrap();
        let m = dataset(dir.path());
        let out = maps(dir.path(), 0.2, 0.4);
        let one = evaluate_dataset(&m, &Predictor::Maps(&out), 4, 1).unwrap();
        let two = evaluate_dataset(&m, &Predictor::Maps(&out), 4, 2).unwrap();
        assert_eq!(one, two);
        assert_eq!(one.images[0].name, "a");
        assert!((one.mean_mae - 0.3).abs() < 1e-3);
        let text = format_report(&one, "synth");
        assert!(text.starts_with("name\tmaxF\tadaptF\tmae\na\t"));
        assert!(text.contains("dataset\tF-Score\tMAE"));
    }

    #[test]
    fn wrong_map_size_and_missing_map_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let m = dataset(dir.path());
        let out = maps(dir.path(), 0.0, 0.0);
        let e = evaluate_dataset(&m, &Predictor::Maps(&out), 8, 1).unwrap_err();
        assert!(matches!(e, AppError::Row { line: 1, .. }), "{e}");
        std::fs::remove_file(out.join("b.pgm")).unwrap();
        let e = evaluate_dataset(&m, &Predictor::Maps(&out), 4, 2).unwrap_err();
        assert!(matches!(e, AppError::Row { line: 2, .. }), "{e}");
        assert_eq!(e.exit_code(), 2);
    }
}
