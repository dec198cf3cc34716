//! Correlation, concatenation, squeezed and combined cost volumes.
//!
//! Disparity hypothesis `d` pairs the left feature at column `x - d` with the
//! right feature at column `x`. Hypotheses whose left column falls outside
//! the image produce zero entries in every volume.

use std::fmt;

use crate::error::{ensure, Result};
use crate::layers::Conv3dLayer;
use crate::tensor::{self, concat, leaky_relu, reshape, Tensor, Var, LEAKY_SLOPE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VolumeKind {
    Correlation,
    Concatenation,
    Squeezed,
    Combined,
}

impl fmt::Display for VolumeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VolumeKind::Correlation => "correlation",
            VolumeKind::Concatenation => "concatenation",
            VolumeKind::Squeezed => "squeezed",
            VolumeKind::Combined => "combined",
        };
        f.write_str(s)
    }
}

/// A cost volume together with its layout.
///
/// Layouts: correlation and squeezed are `[N, D, H, W]`, concatenation is
/// `[N, 2C, D, H, W]`, combined is `[N, 2D, H, W]`.
#[derive(Clone, Debug)]
pub struct CostVolume {
    pub kind: VolumeKind,
    pub data: Var,
    pub max_disparity_levels: usize,
}

impl CostVolume {
    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }
}

fn check_features(f_left: &Var, f_right: &Var, levels: usize) -> Result<[usize; 4]> {
    let s = f_left.shape();
    ensure!(s.len() == 4, "features must be [N,C,H,W], got {s:?}");
    ensure!(
        s == f_right.shape(),
        "left/right feature shapes differ: {s:?} vs {:?}",
        f_right.shape()
    );
    ensure!(levels >= 1, "disparity levels must be >= 1");
    ensure!(
        levels <= s[3],
        "{levels} disparity levels exceed feature width {}",
        s[3]
    );
    Ok([s[0], s[1], s[2], s[3]])
}

/// `corr[n, d, y, x] = (1/C) · Σ_c f_L[n, c, y, x-d] · f_R[n, c, y, x]`.
pub fn correlation_volume(f_left: &Var, f_right: &Var, levels: usize) -> Result<CostVolume> {
    let [n, c, h, w] = check_features(f_left, f_right, levels)?;
    let norm = 1.0 / c as f64;
    let plane = h * w;
    let ld = f_left.value().data();
    let rd = f_right.value().data();
    let mut out = vec![0.0; n * levels * plane];
    for b in 0..n {
        for ch in 0..c {
            let lp = &ld[(b * c + ch) * plane..(b * c + ch + 1) * plane];
            let rp = &rd[(b * c + ch) * plane..(b * c + ch + 1) * plane];
            for d in 0..levels {
                let op = &mut out[(b * levels + d) * plane..(b * levels + d + 1) * plane];
                for y in 0..h {
                    let row = y * w;
                    for x in d..w {
                        op[row + x] += lp[row + x - d] * rp[row + x] * norm;
                    }
                }
            }
        }
    }
    let data = Var::from_op(
        "correlation_volume",
        Tensor::new(&[n, levels, h, w], out)?,
        vec![f_left.clone(), f_right.clone()],
        Box::new(move |g, inputs, _| {
            let gd = g.data();
            let ld = inputs[0].value().data();
            let rd = inputs[1].value().data();
            let mut gl = vec![0.0; ld.len()];
            let mut gr = vec![0.0; rd.len()];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * plane;
                    for d in 0..levels {
                        let gp = &gd[(b * levels + d) * plane..(b * levels + d + 1) * plane];
                        for y in 0..h {
                            let row = y * w;
                            for x in d..w {
                                let gv = gp[row + x] * norm;
                                gl[base + row + x - d] += gv * rd[base + row + x];
                                gr[base + row + x] += gv * ld[base + row + x - d];
                            }
                        }
                    }
                }
            }
            Ok(vec![
                Some(Tensor::new(inputs[0].shape(), gl)?),
                Some(Tensor::new(inputs[1].shape(), gr)?),
            ])
        }),
    )?;
    Ok(CostVolume { kind: VolumeKind::Correlation, data, max_disparity_levels: levels })
}

/// `concat[n, c, d, y, x]` holds `f_L[n, c, y, x-d]` for `c < C` and
/// `f_R[n, c-C, y, x]` for `c >= C`; both halves are zero where `x < d`.
pub fn concat_volume(f_left: &Var, f_right: &Var, levels: usize) -> Result<CostVolume> {
    let [n, c, h, w] = check_features(f_left, f_right, levels)?;
    let plane = h * w;
    let ld = f_left.value().data();
    let rd = f_right.value().data();
    let mut out = vec![0.0; n * 2 * c * levels * plane];
    for b in 0..n {
        for ch in 0..2 * c {
            let (src, shift) = if ch < c {
                (&ld[(b * c + ch) * plane..(b * c + ch + 1) * plane], true)
            } else {
                (&rd[(b * c + ch - c) * plane..(b * c + ch - c + 1) * plane], false)
            };
            for d in 0..levels {
                let off = ((b * 2 * c + ch) * levels + d) * plane;
                let op = &mut out[off..off + plane];
                for y in 0..h {
                    let row = y * w;
                    for x in d..w {
                        op[row + x] = if shift { src[row + x - d] } else { src[row + x] };
                    }
                }
            }
        }
    }
    let data = Var::from_op(
        "concat_volume",
        Tensor::new(&[n, 2 * c, levels, h, w], out)?,
        vec![f_left.clone(), f_right.clone()],
        Box::new(move |g, inputs, _| {
            let gd = g.data();
            let mut gl = vec![0.0; n * c * plane];
            let mut gr = vec![0.0; n * c * plane];
            for b in 0..n {
                for ch in 0..2 * c {
                    for d in 0..levels {
                        let off = ((b * 2 * c + ch) * levels + d) * plane;
                        let gp = &gd[off..off + plane];
                        for y in 0..h {
                            let row = y * w;
                            for x in d..w {
                                if ch < c {
                                    gl[(b * c + ch) * plane + row + x - d] += gp[row + x];
                                } else {
                                    gr[(b * c + ch - c) * plane + row + x] += gp[row + x];
                                }
                            }
                        }
                    }
                }
            }
            Ok(vec![
                Some(Tensor::new(inputs[0].shape(), gl)?),
                Some(Tensor::new(inputs[1].shape(), gr)?),
            ])
        }),
    )?;
    Ok(CostVolume { kind: VolumeKind::Concatenation, data, max_disparity_levels: levels })
}

/// Three size-preserving 3D convolutions, `2C → C → C/2 → 1`.
#[derive(Clone, Debug)]
pub struct SqueezeParams {
    pub layers: [Conv3dLayer; 3],
}

/// Aggregates a concatenation volume down to one channel and drops that axis.
pub fn squeeze_aggregate(vol: &CostVolume, params: &SqueezeParams) -> Result<CostVolume> {
    ensure!(
        vol.kind == VolumeKind::Concatenation,
        "squeeze_aggregate needs a concatenation volume, got {}",
        vol.kind
    );
    let s = vol.shape().to_vec();
    let last = params.layers[2].weight.shape();
    ensure!(last[0] == 1, "final squeeze layer must output 1 channel, has {}", last[0]);
    let mut x = vol.data.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        x = layer.same(&x)?;
        if i < 2 {
            x = leaky_relu(&x, LEAKY_SLOPE)?;
        }
    }
    let data = reshape(&x, &[s[0], s[2], s[3], s[4]])?;
    Ok(CostVolume { kind: VolumeKind::Squeezed, data, max_disparity_levels: vol.max_disparity_levels })
}

/// Channel-wise join: correlation channels `[0, D)`, squeezed `[D, 2D)`.
pub fn combine(corr: &CostVolume, squeezed: &CostVolume) -> Result<CostVolume> {
    ensure!(
        corr.kind == VolumeKind::Correlation && squeezed.kind == VolumeKind::Squeezed,
        "combine needs (correlation, squeezed), got ({}, {})",
        corr.kind,
        squeezed.kind
    );
    ensure!(
        corr.shape() == squeezed.shape(),
        "combine: shapes differ {:?} vs {:?}",
        corr.shape(),
        squeezed.shape()
    );
    let data = concat(&[corr.data.clone(), squeezed.data.clone()], 1)?;
    Ok(CostVolume {
        kind: VolumeKind::Combined,
        data,
        max_disparity_levels: corr.max_disparity_levels,
    })
}

/// Recovers the two constituents of a combined volume.
pub fn split_combined(vol: &CostVolume) -> Result<(Var, Var)> {
    ensure!(vol.kind == VolumeKind::Combined, "split_combined needs a combined volume");
    let d = vol.max_disparity_levels;
    Ok((tensor::slice_axis(&vol.data, 1, 0, d)?, tensor::slice_axis(&vol.data, 1, d, 2 * d)?))
}
