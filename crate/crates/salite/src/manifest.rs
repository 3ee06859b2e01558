//! `image_path<TAB>mask_path` dataset lists.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{AppError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Row {
    pub image: PathBuf,
    pub mask: PathBuf,
    /// 1-based line in the manifest.
    pub line: usize,
}

impl Row {
    /// Image file stem, used as the per-image name in reports.
    pub fn name(&self) -> String {
        self.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    /// File the rows were read from.
    pub source: PathBuf,
    pub rows: Vec<Row>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Attach the manifest location of `row` to an error.
    pub fn row_error(&self, row: &Row, err: AppError) -> AppError {
        AppError::Row {
            manifest: self.source.clone(),
            line: row.line,
            source: Box::new(err),
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base, path)
}

/// Relative paths are joined onto `base`; `source` names the file in errors.
pub fn parse_manifest(text: &str, base: &Path, source: &Path) -> Result<Manifest> {
    let fail = |line: usize, reason: String| AppError::Manifest {
        path: source.into(),
        line,
        reason,
    };
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let (image, mask) = raw.split_once('\t').ok_or_else(|| fail(line, "expected `image<TAB>mask`".into()))?;
        let (image, mask) = (image.trim(), mask.trim());
        if image.is_empty() || mask.is_empty() || mask.contains('\t') {
            return Err(fail(line, "expected exactly two non-empty paths".into()));
        }
        let image = base.join(image);
        if !seen.insert(image.clone()) {
            return Err(fail(line, format!("duplicate image path {}", image.display())));
        }
        rows.push(Row {
            image,
            mask: base.join(mask),
            line,
        });
    }
    Ok(Manifest { source: source.into(), rows })
}

/// Text form with paths as given.
pub fn format_manifest(rows: &[(String, String)]) -> String {
    let mut out = String::from("# image\tmask\n");
    for (image, mask) in rows {
        out.push_str(image);
        out.push('\t');
        out.push_str(mask);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Manifest> {
        parse_manifest(text, Path::new("/data"), Path::new("/data/manifest.tsv"))
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let m = parse("# header\na.ppm\ta.pgm\n\nb.ppm\tb.pgm\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.rows[1].line, 4);
        assert_eq!(m.rows[1].name(), "b");
    }

    #[test]
    fn relative_paths_resolve_against_the_manifest() {
        let m = parse("img/a.ppm\tmask/a.pgm\n/abs/b.ppm\t/abs/b.pgm\n").unwrap();
        assert_eq!(m.rows[0].image, Path::new("/data/img/a.ppm"));
        assert_eq!(m.rows[0].mask, Path::new("/data/mask/a.pgm"));
        assert_eq!(m.rows[1].image, Path::new("/abs/b.ppm"));
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse("a.ppm\ta.pgm\n# c\nb.ppm b.pgm\n").unwrap_err();
        assert!(matches!(e, AppError::Manifest { line: 3, .. }), "{e}");
        let e = parse("a.ppm\ta.pgm\na.ppm\tother.pgm\n").unwrap_err();
        assert!(matches!(e, AppError::Manifest { line: 2, .. }), "{e}");
        assert!(parse("a.ppm\t\n").is_err());
    }

    #[test]
    fn formatted_rows_parse_back() {
        let rows = vec![("x.ppm".to_string(), "x.pgm".to_string())];
        let m = parse(&format_manifest(&rows)).unwrap();
        assert_eq!(m.rows[0].image, Path::new("/data/x.ppm"));
    }
}
