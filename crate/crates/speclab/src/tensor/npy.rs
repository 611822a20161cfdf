//! Minimal NPY v1.0 reader/writer for little-endian float arrays.
//!
//! Exactly the subset the rest of the crate needs: `<f4` and `<f8` payloads,
//! C-order only, any rank on the raw layer. Writes always emit `<f8` with the
//! header space-padded so the payload starts on a 64-byte boundary, matching
//! what numpy produces for the same array.

use std::fs;
use std::path::Path;

use super::TensorError;

pub(crate) const MAGIC: [u8; 6] = *b"\x93NUMPY";

/// Reads an NPY file of any rank, widening `<f4` payloads to f64.
///
/// Every entry is checked for finiteness; the first NaN/Inf aborts the load.
pub fn read_raw(path: &Path) -> Result<(Vec<usize>, Vec<f64>), TensorError> {
    let bytes = fs::read(path)?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>), TensorError> {
    if bytes.len() < 10 || bytes[..6] != MAGIC {
        return Err(TensorError::BadMagic);
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(TensorError::UnsupportedVersion { major, minor });
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload_start = 10 + header_len;
    if bytes.len() < payload_start {
        return Err(TensorError::BadHeader("header exceeds file size".into()));
    }
    let header = std::str::from_utf8(&bytes[10..payload_start])
        .map_err(|_| TensorError::BadHeader("header is not valid UTF-8".into()))?;

    let descr = dict_str(header, "descr")?;
    let elem_size = match descr.as_str() {
        "<f8" => 8,
        "<f4" => 4,
        other => return Err(TensorError::UnsupportedDtype(other.to_string())),
    };
    match dict_bool(header, "fortran_order")? {
        false => {}
        true => return Err(TensorError::FortranOrderUnsupported),
    }
    let dims = dict_shape(header)?;

    let count: usize = dims.iter().product();
    let expected = count * elem_size;
    let payload = &bytes[payload_start..];
    if payload.len() < expected {
        return Err(TensorError::TruncatedPayload {
            expected,
            got: payload.len(),
        });
    }
    let payload = &payload[..expected];

    let mut data = Vec::with_capacity(count);
    match elem_size {
        8 => {
            for chunk in payload.chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
        _ => {
            for chunk in payload.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(TensorError::NonFiniteValue { index });
    }
    Ok((dims, data))
}

/// Writes a C-order `<f8` NPY v1.0 file of any rank.
pub fn write_raw(path: &Path, dims: &[usize], data: &[f64]) -> Result<(), TensorError> {
    let count: usize = dims.iter().product();
    assert_eq!(data.len(), count, "dims/payload length disagree");
    let mut bytes = header_bytes(dims);
    bytes.reserve(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Builds the full preamble (magic, version, HEADER_LEN, padded dict).
fn header_bytes(dims: &[usize]) -> Vec<u8> {
    let shape = match dims.len() {
        1 => format!("({},)", dims[0]),
        _ => {
            let joined: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            format!("({})", joined.join(", "))
        }
    };
    let dict = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {shape}, }}");
    // Pad so the total preamble (10 fixed bytes + dict + padding + '\n') is a
    // multiple of 64, the alignment numpy uses for v1.0 files.
    let unpadded = 10 + dict.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    let header_len = dict.len() + padding + 1;

    let mut out = Vec::with_capacity(10 + header_len);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat(b' ').take(padding));
    out.push(b'\n');
    out
}

/// Pulls a quoted string value out of the header dict.
fn dict_str(header: &str, key: &str) -> Result<String, TensorError> {
    let needle = format!("'{key}':");
    let at = header
        .find(&needle)
        .ok_or_else(|| TensorError::BadHeader(format!("missing key '{key}'")))?;
    let rest = header[at + needle.len()..].trim_start();
    let rest = rest
        .strip_prefix('\'')
        .ok_or_else(|| TensorError::BadHeader(format!("'{key}' value is not a string")))?;
    let end = rest
        .find('\'')
        .ok_or_else(|| TensorError::BadHeader(format!("unterminated '{key}' value")))?;
    Ok(rest[..end].to_string())
}

fn dict_bool(header: &str, key: &str) -> Result<bool, TensorError> {
    let needle = format!("'{key}':");
    let at = header
        .find(&needle)
        .ok_or_else(|| TensorError::BadHeader(format!("missing key '{key}'")))?;
    let rest = header[at + needle.len()..].trim_start();
    if rest.starts_with("True") {
        Ok(true)
    } else if rest.starts_with("False") {
        Ok(false)
    } else {
        Err(TensorError::BadHeader(format!("'{key}' is not a boolean")))
    }
}

fn dict_shape(header: &str) -> Result<Vec<usize>, TensorError> {
    let at = header
        .find("'shape':")
        .ok_or_else(|| TensorError::BadHeader("missing key 'shape'".into()))?;
    let rest = header[at + "'shape':".len()..].trim_start();
    let rest = rest
        .strip_prefix('(')
        .ok_or_else(|| TensorError::BadHeader("'shape' is not a tuple".into()))?;
    let end = rest
        .find(')')
        .ok_or_else(|| TensorError::BadHeader("unterminated 'shape' tuple".into()))?;
    let mut dims = Vec::new();
    for part in rest[..end].split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue; // trailing comma of a 1-tuple
        }
        let d: usize = part
            .parse()
            .map_err(|_| TensorError::BadHeader(format!("bad shape entry '{part}'")))?;
        dims.push(d);
    }
    Ok(dims)
}
