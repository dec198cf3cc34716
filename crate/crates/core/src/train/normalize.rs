use crate::error::{ensure, Result};
use crate::tensor::Tensor;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

fn per_channel(image: &Tensor, f: impl Fn(f64, usize) -> f64) -> Result<Tensor> {
    let s = image.shape();
    ensure!(s.len() == 4 && s[1] == 3, "expected [N,3,H,W] image, got {s:?}");
    let plane = s[2] * s[3];
    let mut out = image.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = f(*v, (i / plane) % 3);
    }
    Ok(out)
}

/// Per-channel `(x - mean) / std` with ImageNet statistics.
pub fn normalize_colors(image: &Tensor) -> Result<Tensor> {
    per_channel(image, |v, c| (v - IMAGENET_MEAN[c]) / IMAGENET_STD[c])
}

pub fn denormalize_colors(image: &Tensor) -> Result<Tensor> {
    per_channel(image, |v, c| v * IMAGENET_STD[c] + IMAGENET_MEAN[c])
}
