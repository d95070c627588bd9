//! Minimal NPY v1.0 container for image arrays.
//!
//! Exactly the subset the noise-injection pipeline needs: C-order arrays,
//! little-endian float64 written, float64 or float32 accepted on read.
//! Layout (bit-exact):
//!
//! ```text
//! offset 0:  magic "\x93NUMPY"
//! offset 6:  version bytes 0x01 0x00
//! offset 8:  header length, u16 little-endian
//! offset 10: header dict, e.g.
//!            "{'descr': '<f8', 'fortran_order': False, 'shape': (32, 32, 3), }"
//!            padded with spaces so the data section starts at a multiple
//!            of 64 bytes, terminated by '\n'
//! then:      values in C order, little-endian
//! ```

use crate::sampler::noise::ImageArray;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NpyError {
    #[error("not an npy file (bad magic)")]
    BadMagic,
    #[error("unsupported npy feature: {0}")]
    Unsupported(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("data length {actual} does not match shape ({expected} values)")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Write an image as float64 NPY v1.0.
pub fn write_image<W: Write>(writer: &mut W, image: &ImageArray) -> Result<(), NpyError> {
    let dict = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}, {}), }}",
        image.height, image.width, image.channels
    );
    // Pad so magic + version + length field + header is 64-aligned.
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    let header_len = dict.len() + padding + 1;
    writer.write_all(MAGIC)?;
    writer.write_all(&[0x01, 0x00])?;
    writer.write_all(&(header_len as u16).to_le_bytes())?;
    writer.write_all(dict.as_bytes())?;
    writer.write_all(&b" ".repeat(padding))?;
    writer.write_all(b"\n")?;
    for v in &image.data {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read a 3-dimensional float NPY array as an image.
pub fn read_image<R: Read>(reader: &mut R) -> Result<ImageArray, NpyError> {
    let mut magic = [0u8; 6];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NpyError::BadMagic);
    }
    let mut version = [0u8; 2];
    reader.read_exact(&mut version)?;
    let header_len = match version[0] {
        1 => {
            let mut len = [0u8; 2];
            reader.read_exact(&mut len)?;
            u16::from_le_bytes(len) as usize
        }
        2 | 3 => {
            let mut len = [0u8; 4];
            reader.read_exact(&mut len)?;
            u32::from_le_bytes(len) as usize
        }
        v => return Err(NpyError::Unsupported(format!("version {v}"))),
    };
    let mut header = vec![0u8; header_len];
    reader.read_exact(&mut header)?;
    let header = String::from_utf8(header)
        .map_err(|e| NpyError::MalformedHeader(e.to_string()))?;

    let descr = extract_quoted(&header, "descr")?;
    let width_bytes = match descr.as_str() {
        "<f8" => 8,
        "<f4" => 4,
        other => return Err(NpyError::Unsupported(format!("descr {other:?}"))),
    };
    if header.contains("'fortran_order': True") {
        return Err(NpyError::Unsupported("fortran order".into()));
    }
    let shape = extract_shape(&header)?;
    if shape.len() != 3 {
        return Err(NpyError::Unsupported(format!(
            "expected 3 dimensions, got {}",
            shape.len()
        )));
    }
    let expected = shape.iter().product::<usize>();
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw)?;
    if raw.len() != expected * width_bytes {
        return Err(NpyError::LengthMismatch {
            expected: expected * width_bytes,
            actual: raw.len(),
        });
    }
    let data: Vec<f64> = match width_bytes {
        8 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
        _ => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
    };
    Ok(ImageArray {
        height: shape[0],
        width: shape[1],
        channels: shape[2],
        data,
    })
}

fn extract_quoted(header: &str, key: &str) -> Result<String, NpyError> {
    let marker = format!("'{key}':");
    let start = header
        .find(&marker)
        .ok_or_else(|| NpyError::MalformedHeader(format!("missing {key}")))?;
    let rest = &header[start + marker.len()..];
    let open = rest
        .find('\'')
        .ok_or_else(|| NpyError::MalformedHeader(format!("unquoted {key}")))?;
    let rest = &rest[open + 1..];
    let close = rest
        .find('\'')
        .ok_or_else(|| NpyError::MalformedHeader(format!("unterminated {key}")))?;
    Ok(rest[..close].to_string())
}

fn extract_shape(header: &str) -> Result<Vec<usize>, NpyError> {
    let start = header
        .find("'shape':")
        .ok_or_else(|| NpyError::MalformedHeader("missing shape".into()))?;
    let rest = &header[start..];
    let open = rest
        .find('(')
        .ok_or_else(|| NpyError::MalformedHeader("shape is not a tuple".into()))?;
    let close = rest[open..]
        .find(')')
        .ok_or_else(|| NpyError::MalformedHeader("unterminated shape".into()))?;
    rest[open + 1..open + close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|e| NpyError::MalformedHeader(format!("bad dimension {s:?}: {e}")))
        })
        .collect()
}
