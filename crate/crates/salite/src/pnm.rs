//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::fmt;

use salite_core::data::RgbImage;

/// Where and why decoding failed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmError {
    pub offset: usize,
    pub reason: String,
}

impl fmt::Display for PnmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "byte {}: {}", self.offset, self.reason)
    }
}

impl std::error::Error for PnmError {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pnm {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl Pnm {
    /// Grey images are replicated to three channels.
    pub fn into_rgb(self) -> RgbImage {
        match self {
            Pnm::Rgb(img) => img,
            Pnm::Gray(g) => RgbImage::from_gray(g.height, g.width, &g.pixels).expect("pixel count matches"),
        }
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T, PnmError> {
        Err(PnmError {
            offset: self.pos,
            reason: reason.into(),
        })
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, PnmError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return if self.pos >= self.bytes.len() {
                self.fail(format!("header ends before {what}"))
            } else {
                self.fail(format!("expected {what}"))
            };
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        match text.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => {
                self.pos = start;
                self.fail(format!("{what} must be a positive integer"))
            }
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Pnm, PnmError> {
    let mut h = Header { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return h.fail("not a binary PGM (P5) or PPM (P6) file"),
    };
    h.pos = 2;
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        h.pos = maxval_at;
        h.skip_space();
        return h.fail(format!("unsupported maxval {maxval} (only 255)"));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        Some(_) => return h.fail("expected whitespace after maxval"),
        None => return h.fail("header ends before pixel data"),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| PnmError {
            offset: h.pos,
            reason: "image dimensions overflow".into(),
        })?;
    let payload = &bytes[h.pos..];
    if payload.len() < need {
        return Err(PnmError {
            offset: bytes.len(),
            reason: format!("truncated pixel data: {} of {need} bytes", payload.len()),
        });
    }
    let pixels = payload[..need].to_vec();
    Ok(if channels == 1 {
        Pnm::Gray(GrayImage { height, width, pixels })
    } else {
        Pnm::Rgb(RgbImage { height, width, pixels })
    })
}

fn encode(magic: &str, height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    encode("P6", img.height, img.width, &img.pixels)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    encode("P5", img.height, img.width, &img.pixels)
}
