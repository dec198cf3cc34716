use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// Loads an image as `[1,3,H,W]` with values in [0,1].
pub fn read_rgb(path: impl AsRef<Path>) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64;
        }
    }
    Tensor::new(&[1, 3, h, w], data)
}

/// Writes a `[1,3,H,W]` tensor in [0,1] as an 8-bit RGB PNG.
pub fn write_rgb(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let s = image.shape();
    ensure!(s.len() == 4 && s[0] == 1 && s[1] == 3, "expected [1,3,H,W] image, got {s:?}");
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    let d = image.data();
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([0, 1, 2].map(|c| (d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes a `[1,1,H,W]` mask as an 8-bit grayscale PNG (0 or 255).
pub fn write_mask(path: impl AsRef<Path>, mask: &Tensor) -> Result<()> {
    let s = mask.shape();
    ensure!(s.len() == 4 && s[0] == 1 && s[1] == 1, "expected [1,1,H,W] mask, got {s:?}");
    let w = s[3];
    let d = mask.data();
    let img: ImageBuffer<image::Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, s[2] as u32, |x, y| {
        image::Luma([if d[y as usize * w + x as usize] > 0.0 { 255 } else { 0 }])
    });
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Tensor> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::new(&[1, 1, h, w], img.pixels().map(|p| if p[0] > 127 { 1.0 } else { 0.0 }).collect())
}
