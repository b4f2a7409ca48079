//! Binary PPM (P6) with maxval 255.

use super::RgbImage;
use crate::error::{Error, Result};

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.raw());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 0;
    if bytes.get(..2) != Some(b"P6") {
        return Err(Error::Format("not a binary PPM (missing P6)".into()));
    }
    pos += 2;
    let width = header_number(bytes, &mut pos)?;
    let height = header_number(bytes, &mut pos)?;
    let maxval = header_number(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PPM maxval {maxval}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("PPM header not terminated by whitespace".into())),
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::Format("PPM dimensions overflow".into()))?;
    let body = &bytes[pos..];
    if body.len() != len {
        return Err(Error::Format(format!(
            "PPM {width}x{height} needs {len} data bytes, found {}",
            body.len()
        )));
    }
    RgbImage::from_raw(width, height, body.to_vec())
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("expected a number in the PPM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("PPM header number out of range".into()))
}
