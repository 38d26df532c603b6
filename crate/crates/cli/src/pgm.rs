//! Binary PGM (P5) image files, the raster interchange format of the tool.
//!
//! Writing always emits the canonical header `P5\n<cols> <rows>\n255\n`
//! followed by the raw bytes, so identical rasters produce identical files.
//! Reading accepts any conforming P5 header (whitespace-separated tokens,
//! `#` comments) with a maximum value of at most 255.

use std::fs;
use std::path::Path;

use tripletloc_core::Raster;

use crate::error::{CliError, Result};

pub fn write_pgm(path: &Path, raster: &Raster) -> Result<()> {
    let mut bytes =
        format!("P5\n{} {}\n255\n", raster.cols(), raster.rows()).into_bytes();
    bytes.extend_from_slice(raster.data());
    fs::write(path, bytes).map_err(|e| CliError::io_at(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| CliError::io_at(path, e))?;
    let bad = |what: &str| CliError::invalid(format!("{}: {what}", path.display()));

    // Header: magic, width, height, maxval as whitespace-separated tokens,
    // with `#` comments running to end of line.
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Option<(usize, usize)> {
        while pos < bytes.len() {
            match bytes[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then_some((start, pos))
    };

    let (s, e) = token(&bytes).ok_or_else(|| bad("empty file"))?;
    if &bytes[s..e] != b"P5" {
        return Err(bad("not a binary PGM (P5) file"));
    }
    let mut field = |name: &str| -> Result<usize> {
        let (s, e) = token(&bytes).ok_or_else(|| bad("truncated header"))?;
        std::str::from_utf8(&bytes[s..e])
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("bad {name} in header")))
    };
    let cols = field("width")?;
    let rows = field("height")?;
    let maxval = field("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit images (maxval <= 255) are supported"));
    }

    // Exactly one whitespace byte separates the header from the pixel data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing separator before pixel data"));
    }
    pos += 1;
    let expected = rows
        .checked_mul(cols)
        .ok_or_else(|| bad("image dimensions overflow"))?;
    let data = &bytes[pos..];
    if data.len() != expected {
        return Err(bad(&format!(
            "expected {expected} pixel bytes for {cols}x{rows}, found {}",
            data.len()
        )));
    }
    Raster::new(rows, cols, data.to_vec())
        .map_err(|e| bad(&format!("invalid raster: {e}")))
}
