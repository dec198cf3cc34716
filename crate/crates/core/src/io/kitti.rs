//! 16-bit PNG disparity maps: stored value `round(d · 256)`, 0 marks invalid.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

pub const KITTI_SCALE: f64 = 256.0;

/// Quantized 16-bit values; pixels with `mask == 0` (when given) store 0.
pub fn encode_kitti(disparity: &Tensor, mask: Option<&Tensor>) -> Result<Vec<u16>> {
    let s = disparity.shape();
    ensure!(s.len() == 4 && s[0] == 1 && s[1] == 1, "expected a [1,1,H,W] disparity map, got {s:?}");
    if let Some(m) = mask {
        ensure!(m.shape() == s, "mask shape {:?} differs from disparity {s:?}", m.shape());
    }
    disparity
        .data()
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if mask.is_some_and(|m| m.data()[i] <= 0.0) {
                return Ok(0);
            }
            ensure!(d.is_finite() && d >= 0.0, "disparity {d} at pixel {i} is not a non-negative number");
            if d >= 256.0 {
                return Err(Error::Range(format!("disparity {d} at pixel {i} is not below 256")));
            }
            Ok((d * KITTI_SCALE).round() as u16)
        })
        .collect()
}

/// `(disparity, mask)`; the mask is 0 where the stored value is 0.
pub fn decode_kitti(raw: &[u16], height: usize, width: usize) -> Result<(Tensor, Tensor)> {
    ensure!(raw.len() == height * width, "raw buffer does not match {height}x{width}");
    let disp = raw.iter().map(|&v| v as f64 / KITTI_SCALE).collect();
    let mask = raw.iter().map(|&v| if v == 0 { 0.0 } else { 1.0 }).collect();
    Ok((Tensor::new(&[1, 1, height, width], disp)?, Tensor::new(&[1, 1, height, width], mask)?))
}

pub fn write_kitti_png(path: impl AsRef<Path>, disparity: &Tensor, mask: Option<&Tensor>) -> Result<()> {
    let raw = encode_kitti(disparity, mask)?;
    let (h, w) = (disparity.shape()[2], disparity.shape()[3]);
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer sized from tensor");
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_kitti_png(path: impl AsRef<Path>) -> Result<(Tensor, Tensor)> {
    match image::open(path)? {
        DynamicImage::ImageLuma16(img) => {
            let (w, h) = img.dimensions();
            decode_kitti(img.as_raw(), h as usize, w as usize)
        }
        other => Err(Error::Format(format!("expected a 16-bit grayscale PNG, found {:?}", other.color()))),
    }
}
