//! Binary PGM (P5): 8-bit grayscale images and 16-bit big-endian label maps.

use std::fs;
use std::path::Path;

use super::{DataError, GrayImage, LabelMap};

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    payload_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, DataError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(DataError::MalformedHeader("missing P5 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(DataError::MalformedHeader(format!("expected number for field {i}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| DataError::MalformedHeader(format!("field {i} out of range")))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(DataError::MalformedHeader("missing separator after maxval".into())),
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(DataError::MalformedHeader("zero dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(DataError::MalformedHeader(format!("invalid maxval {maxval}")));
    }
    Ok(Header {
        width: w as usize,
        height: h as usize,
        maxval: maxval as u32,
        payload_start: pos,
    })
}

fn header_bytes(width: usize, height: usize, maxval: u32) -> Vec<u8> {
    format!("P5\n{width} {height}\n{maxval}\n").into_bytes()
}

pub fn decode_image(bytes: &[u8]) -> Result<GrayImage, DataError> {
    let h = parse_header(bytes)?;
    if h.maxval != 255 {
        return Err(DataError::UnsupportedDepth(h.maxval));
    }
    let n = h.width * h.height;
    let payload = &bytes[h.payload_start..];
    if payload.len() < n {
        return Err(DataError::TruncatedPayload {
            expected: n,
            got: payload.len(),
        });
    }
    GrayImage::new(h.width, h.height, payload[..n].to_vec())
}

pub fn encode_image(image: &GrayImage) -> Vec<u8> {
    let mut out = header_bytes(image.width(), image.height(), 255);
    out.extend_from_slice(image.pixels());
    out
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap, DataError> {
    let h = parse_header(bytes)?;
    if h.maxval != 65535 {
        return Err(DataError::UnsupportedDepth(h.maxval));
    }
    let n = h.width * h.height;
    let payload = &bytes[h.payload_start..];
    if payload.len() < 2 * n {
        return Err(DataError::TruncatedPayload {
            expected: 2 * n,
            got: payload.len(),
        });
    }
    let labels = payload[..2 * n]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
        .collect();
    LabelMap::new(h.width, h.height, labels)
}

pub fn encode_labels(labels: &LabelMap) -> Result<Vec<u8>, DataError> {
    let mut out = header_bytes(labels.width(), labels.height(), 65535);
    out.reserve(2 * labels.labels().len());
    for &l in labels.labels() {
        let v = u16::try_from(l).map_err(|_| DataError::LabelOverflow(l))?;
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage, DataError> {
    decode_image(&fs::read(path)?)
}

pub fn save_image(image: &GrayImage, path: impl AsRef<Path>) -> Result<(), DataError> {
    fs::write(path, encode_image(image))?;
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap, DataError> {
    decode_labels(&fs::read(path)?)
}

/// Fails with [`DataError::LabelOverflow`] before touching the file if any
/// label exceeds 65535.
pub fn save_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<(), DataError> {
    let bytes = encode_labels(labels)?;
    fs::write(path, bytes)?;
    Ok(())
}
