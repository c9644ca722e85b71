//! Binary PGM (P5, maxval 255) maps. Intensity `v` is stored as byte
//! `round(255 * v)` and read back as `byte / 255`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::types::SaliencyMap;

/// GT masks are foreground where the stored byte exceeds this value.
pub const MASK_THRESHOLD_BYTE: u8 = 127;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }
}

pub fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<SaliencyMap> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(path, "unsupported format: expected binary PGM (P5)"));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur
        .number()
        .ok_or_else(|| Error::format(path, "missing width in PGM header"))?;
    let height = cur
        .number()
        .ok_or_else(|| Error::format(path, "missing height in PGM header"))?;
    let maxval = cur
        .number()
        .ok_or_else(|| Error::format(path, "missing maxval in PGM header"))?;
    if maxval != 255 {
        return Err(Error::format(
            path,
            format!("unsupported format: maxval {maxval}, only 255 is accepted"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::format(path, "PGM header not terminated by whitespace"));
    }
    let raster = &bytes[cur.pos + 1..];
    if raster.len() != width * height {
        return Err(Error::format(
            path,
            format!(
                "dimension mismatch: header declares {width}x{height} ({} bytes), raster has {}",
                width * height,
                raster.len()
            ),
        ));
    }
    let data = raster.iter().map(|&b| b as f32 / 255.0).collect();
    SaliencyMap::new(width, height, data)
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(map: &SaliencyMap) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", map.width(), map.height());
    let mut out = Vec::with_capacity(header.len() + map.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(map.data().iter().map(|&v| quantize(v)));
    out
}

pub fn read_map(path: &Path) -> Result<SaliencyMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(path, &bytes)
}

/// Reads a PGM and binarizes it at byte value > 127.
pub fn read_mask(path: &Path) -> Result<SaliencyMap> {
    let map = read_map(path)?;
    Ok(map.binarized(MASK_THRESHOLD_BYTE as f32 / 255.0 + 0.5 / 255.0))
}

pub fn write_map(map: &SaliencyMap, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, encode_pgm(map)).map_err(|e| Error::io(path, e))
}
