//! Encoder checkpoints: a little-endian binary format, magic `MLOC`.
//!
//! Layout (all integers `u32` little-endian, all floats `f64` little-endian):
//!
//! ```text
//! "MLOC"  version  layer_count  { rows  cols  weights[rows*cols]  biases[rows] }*
//! ```
//!
//! Weight matrices are stored row-major. Version mismatches and structural
//! damage are reported as invalid input, not I/O failure, so callers exit
//! with code 1.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use tripletloc_core::{EncoderParams, Layer};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"MLOC";
pub const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, params: &EncoderParams) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io_at(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| CliError::io_at(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    w.write_u32::<LittleEndian>(params.layers().len() as u32).map_err(io)?;
    for layer in params.layers() {
        w.write_u32::<LittleEndian>(layer.rows() as u32).map_err(io)?;
        w.write_u32::<LittleEndian>(layer.cols() as u32).map_err(io)?;
        for &v in layer.weights() {
            w.write_f64::<LittleEndian>(v).map_err(io)?;
        }
        for &v in layer.biases() {
            w.write_f64::<LittleEndian>(v).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    let file = File::open(path).map_err(|e| CliError::io_at(path, e))?;
    let mut r = BufReader::new(file);
    // Structural damage surfaces as UnexpectedEof mid-read: that is a bad
    // file, not a failing filesystem.
    let io = |e: std::io::Error| {
        if e.kind() == ErrorKind::UnexpectedEof {
            CliError::invalid(format!("{}: truncated checkpoint", path.display()))
        } else {
            CliError::io_at(path, e)
        }
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(CliError::invalid(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(CliError::invalid(format!(
            "{}: unsupported checkpoint version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let layer_count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let invalid = |what: String| CliError::invalid(format!("{}: {what}", path.display()));
    let mut layers = Vec::with_capacity(layer_count);
    for li in 0..layer_count {
        let rows = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let cols = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| invalid(format!("layer {li} shape overflows")))?;
        let mut weights = vec![0.0; count];
        r.read_f64_into::<LittleEndian>(&mut weights).map_err(io)?;
        let mut biases = vec![0.0; rows];
        r.read_f64_into::<LittleEndian>(&mut biases).map_err(io)?;
        layers.push(
            Layer::new(rows, cols, weights, biases)
                .map_err(|e| invalid(format!("layer {li}: {e}")))?,
        );
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(invalid("trailing bytes after last layer".into()));
    }
    EncoderParams::from_layers(layers).map_err(|e| invalid(format!("{e}")))
}
