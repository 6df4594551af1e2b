//! File helpers shared by the on-disk formats: JSON headers, raw byte
//! payloads and binary PPM (P6).

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::read(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Reads a `{0,1}` byte raster of exactly `len` cells.
pub fn read_bitmap(path: &Path, len: usize) -> Result<Vec<bool>> {
    let bytes = read_bytes(path)?;
    if bytes.len() != len {
        return Err(Error::Consistency(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            len,
            bytes.len()
        )));
    }
    bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(
                path.display().to_string(),
                format!("byte value {other} is not 0 or 1"),
            )),
        })
        .collect()
}

pub fn write_bitmap(path: &Path, bits: &[bool]) -> Result<()> {
    let bytes: Vec<u8> = bits.iter().map(|&b| b as u8).collect();
    write_bytes(path, &bytes)
}

/// Encodes an RGB raster as binary PPM with the canonical header
/// `P6\n<width> <height>\n255\n`.
pub fn encode_ppm(width: u32, height: u32, rgb: &[u8]) -> Vec<u8> {
    let header = format!("P6\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + rgb.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(rgb);
    out
}

/// Decodes a binary PPM. Comments and arbitrary whitespace in the header are
/// accepted; only `maxval = 255` is supported.
pub fn decode_ppm(bytes: &[u8], what: &str) -> Result<(u32, u32, Vec<u8>)> {
    let err = |reason: &str| Error::format(what, reason);
    let mut pos = 0usize;
    let mut fields: Vec<String> = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("missing separator after maxval"));
    }
    pos += 1;

    if fields[0] != "P6" {
        return Err(err("magic number is not P6"));
    }
    let parse = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| err("non-numeric header field"))
    };
    let width = parse(&fields[1])?;
    let height = parse(&fields[2])?;
    let maxval = parse(&fields[3])?;
    if maxval != 255 {
        return Err(err("only maxval 255 is supported"));
    }
    let expected = width as usize * height as usize * 3;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(Error::format(
            what,
            format!("payload has {} bytes, expected {}", payload.len(), expected),
        ));
    }
    Ok((width, height, payload.to_vec()))
}
