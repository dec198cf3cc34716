//! Right-to-left image warping, reconstruction error maps and per-scale
//! input pyramids.

use crate::error::{ensure, Result};
use crate::tensor::{self, abs, avg_pool2d, mul_channel_broadcast, scale, sub, Tensor, Var};

/// Per-pixel absolute reconstruction error at one pyramid scale.
#[derive(Clone, Debug)]
pub struct ErrorMap {
    pub data: Var,
    pub scale: usize,
    pub valid_mask: Tensor,
}

/// Samples `right` at column `x - disp(x, y)` with linear interpolation
/// between the two neighbouring columns.
///
/// Returns the synthesized left view and a `[N,1,H,W]` mask that is 1 where
/// the sample position lies inside `[0, W-1]`. Masked pixels are 0.
pub fn warp_right_to_left(right: &Var, disp: &Var) -> Result<(Var, Tensor)> {
    let s = right.shape();
    ensure!(s.len() == 4, "warp expects [N,C,H,W] image, got {s:?}");
    ensure!(
        disp.shape() == [s[0], 1, s[2], s[3]],
        "disparity shape {:?} does not match image {s:?}",
        disp.shape()
    );
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let plane = h * w;
    let dd = disp.value().data();
    ensure!(dd.iter().all(|v| v.is_finite()), "disparity contains non-finite values");

    // (left column, right column, weight of right column) per pixel, or None
    let taps: Vec<Option<(usize, usize, f64)>> = dd
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let x = (i % w) as f64;
            let u = x - d;
            if u < 0.0 || u > (w - 1) as f64 {
                return None;
            }
            let x0 = (u.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            Some((x0, x1, u - x0 as f64))
        })
        .collect();
    let mask = Tensor::from_fn(&[n, 1, h, w], |i| if taps[i].is_some() { 1.0 } else { 0.0 });

    let rd = right.value().data();
    let mut out = vec![0.0; rd.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for p in 0..plane {
                if let Some((x0, x1, a)) = taps[b * plane + p] {
                    let row = base + (p / w) * w;
                    out[base + p] = (1.0 - a) * rd[row + x0] + a * rd[row + x1];
                }
            }
        }
    }
    let warped = Var::from_op(
        "warp_right_to_left",
        Tensor::new(s, out)?,
        vec![right.clone(), disp.clone()],
        Box::new(move |g, inputs, _| {
            let gd = g.data();
            let rd = inputs[0].value().data();
            let mut g_img = vec![0.0; rd.len()];
            let mut g_disp = vec![0.0; n * plane];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * plane;
                    for p in 0..plane {
                        let Some((x0, x1, a)) = taps[b * plane + p] else { continue };
                        let row = base + (p / w) * w;
                        let gv = gd[base + p];
                        g_img[row + x0] += (1.0 - a) * gv;
                        g_img[row + x1] += a * gv;
                        // d(sample)/du = r[x1] - r[x0]; du/d(disp) = -1
                        g_disp[b * plane + p] -= gv * (rd[row + x1] - rd[row + x0]);
                    }
                }
            }
            Ok(vec![
                Some(Tensor::new(inputs[0].shape(), g_img)?),
                Some(Tensor::new(inputs[1].shape(), g_disp)?),
            ])
        }),
    )?;
    Ok((warped, mask))
}

/// `|warped - left| · mask`, with the single-channel mask broadcast over
/// colour channels.
pub fn error_map(warped: &Var, left: &Var, valid_mask: &Tensor, scale_index: usize) -> Result<ErrorMap> {
    ensure!(
        warped.shape() == left.shape(),
        "error_map: shapes {:?} and {:?} differ",
        warped.shape(),
        left.shape()
    );
    let s = left.shape();
    ensure!(
        valid_mask.shape() == [s[0], 1, s[2], s[3]],
        "error_map: mask shape {:?} does not match {s:?}",
        valid_mask.shape()
    );
    let diff = abs(&sub(warped, left)?)?;
    let data = mul_channel_broadcast(&diff, &Var::constant(valid_mask.clone()))?;
    Ok(ErrorMap { data, scale: scale_index, valid_mask: valid_mask.clone() })
}

/// Average-pools an image to `1 / 2^scale` resolution.
pub fn downsample_image(image: &Var, scale_index: usize) -> Result<Var> {
    ensure!(scale_index <= 3, "scale {scale_index} outside 0..=3");
    avg_pool2d(image, 1 << scale_index)
}

/// Average-pools a disparity map and divides its values by `2^scale` so they
/// stay in pixel units of the reduced grid.
pub fn downsample_disparity(disp: &Var, scale_index: usize) -> Result<Var> {
    ensure!(scale_index <= 3, "scale {scale_index} outside 0..=3");
    let factor = 1 << scale_index;
    scale(&avg_pool2d(disp, factor)?, 1.0 / factor as f64)
}

/// Downsamples a `{0,1}` mask: a coarse pixel is valid only if every fine
/// pixel it covers is valid.
pub fn downsample_mask(mask: &Tensor, scale_index: usize) -> Result<Tensor> {
    let pooled = tensor::avg_pool2d(&Var::constant(mask.clone()), 1 << scale_index)?;
    Ok(pooled.value().map(|v| if v > 1.0 - 1e-9 { 1.0 } else { 0.0 }))
}
