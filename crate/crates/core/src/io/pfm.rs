//! Single-channel portable float maps ("Pf").

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

fn map_extent(t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    ensure!(
        s.len() == 4 && s[0] == 1 && s[1] == 1,
        "expected a [1,1,H,W] disparity map, got {s:?}"
    );
    Ok((s[2], s[3]))
}

/// Serializes a `[1,1,H,W]` map: little-endian 32-bit floats, bottom row first.
pub fn encode_pfm(disparity: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = map_extent(disparity)?;
    ensure!(disparity.all_finite(), "disparity map contains non-finite values");
    if let Some(v) = disparity.data().iter().find(|v| v.abs() > f32::MAX as f64) {
        return Err(Error::Range(format!("value {v} does not fit a 32-bit float")));
    }
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for row in disparity.data().chunks(w).rev() {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Splits off one whitespace-terminated header token.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos || *pos == bytes.len() {
        return Err(Error::Format("truncated PFM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format("PFM header is not ASCII".into()))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    match token(bytes, &mut pos)? {
        "Pf" => {}
        "PF" => return Err(Error::Format("colour PFM is not supported".into())),
        other => return Err(Error::Format(format!("bad PFM magic `{other}`"))),
    }
    let dim = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Format(format!("bad PFM dimension `{s}`")))
    };
    let w = dim(token(bytes, &mut pos)?)?;
    let h = dim(token(bytes, &mut pos)?)?;
    let scale: f64 = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::Format("bad PFM scale".into()))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format(format!("bad PFM scale {scale}")));
    }
    // exactly one whitespace byte separates the header from the payload
    let payload = &bytes[pos + 1..];
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("PFM dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "PFM payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let little = scale < 0.0;
    let mut data = vec![0.0; w * h];
    for (r, row) in payload.chunks_exact(4 * w).enumerate() {
        let y = h - 1 - r;
        for (x, b) in row.chunks_exact(4).enumerate() {
            let b = [b[0], b[1], b[2], b[3]];
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            data[y * w + x] = v as f64;
        }
    }
    Tensor::new(&[1, 1, h, w], data)
}

pub fn write_pfm(path: impl AsRef<Path>, disparity: &Tensor) -> Result<()> {
    let bytes = encode_pfm(disparity)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_pfm(&fs::read(path)?)
}
