//! Binary PPM (P6) and PGM (P5) codecs, the crate's zero-dependency image
//! formats. Grayscale images replicate to three channels on decode; values
//! scale to [0, 1] as `byte / 255`.

use std::path::Path;

use quadtrack_core::Tensor;

use crate::error::{Error, Result};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_whitespace_and_comments(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(c) = self.peek() {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }
}

/// Decode a binary P5/P6 buffer into `1 x 3 x H x W`.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<Tensor<f32>> {
    if bytes.len() < 2 {
        return Err(Error::parse(origin, 1, "unexpected end of data"));
    }
    let channels = match &bytes[..2] {
        b"P6" => 3usize,
        b"P5" => 1usize,
        _ => return Err(Error::parse(origin, 1, "bad magic: expected P5 or P6")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let w = cur
        .number()
        .ok_or_else(|| Error::parse(origin, 1, "missing or invalid width"))?;
    let h = cur
        .number()
        .ok_or_else(|| Error::parse(origin, 1, "missing or invalid height"))?;
    let maxval = cur
        .number()
        .ok_or_else(|| Error::parse(origin, 1, "missing or invalid maxval"))?;
    if maxval != 255 {
        return Err(Error::parse(
            origin,
            1,
            format!("unsupported maxval {maxval} (only 255)"),
        ));
    }
    if w == 0 || h == 0 {
        return Err(Error::parse(origin, 1, "zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    cur.pos += 1;
    let need = w * h * channels;
    let raster = bytes
        .get(cur.pos..cur.pos + need)
        .ok_or_else(|| Error::parse(origin, 1, "unexpected end of data"))?;
    let mut out = Tensor::zeros([1, 3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * channels;
            for c in 0..3 {
                let b = raster[base + if channels == 3 { c } else { 0 }];
                *out.at_mut(0, c, y, x) = b as f32 / 255.0;
            }
        }
    }
    Ok(out)
}

pub fn decode_file(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Encode a `1 x 3 x H x W` tensor as binary P6; values are clamped to
/// [0, 1] and quantized as `round(v * 255)`.
pub fn encode_p6(frame: &Tensor<f32>) -> Vec<u8> {
    let (h, w) = (frame.height(), frame.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = frame.at(0, c, y, x).clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    out
}

pub fn write_p6(path: &Path, frame: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode_p6(frame)).map_err(|e| Error::io(path, e))
}
