//! Attention-gated residual refinement: spatial attention logits, gating of
//! the residual features, a 2D hourglass regressor and composition of the
//! refined disparity.

use crate::error::{ensure, Result};
use crate::layers::{Conv2dLayer, Deconv2dLayer};
use crate::tensor::{
    add, bilinear_upsample, concat, leaky_relu, mul_channel_broadcast, scale, sigmoid, ConvSpec, Var,
    LEAKY_SLOPE,
};

/// Channels of the attention input: left(3) | right(3) | error(3) | disparity(1).
pub const ATTENTION_INPUT_CHANNELS: usize = 10;

/// Per-scale inputs of the attention module.
#[derive(Clone, Debug)]
pub struct AttentionInput {
    pub left: Var,
    pub right: Var,
    pub error: Var,
    pub disparity: Var,
}

impl AttentionInput {
    /// Concatenates the parts in the fixed channel order.
    pub fn concatenated(&self) -> Result<Var> {
        let s = self.left.shape();
        ensure!(s.len() == 4 && s[1] == 3, "left image must be [N,3,h,w], got {s:?}");
        let spatial = |v: &Var| v.shape().len() == 4 && v.shape()[0] == s[0] && v.shape()[2..] == s[2..];
        ensure!(
            spatial(&self.right) && spatial(&self.error) && spatial(&self.disparity),
            "attention input parts disagree on extent: left {s:?}, right {:?}, error {:?}, disparity {:?}",
            self.right.shape(),
            self.error.shape(),
            self.disparity.shape()
        );
        ensure!(
            self.right.shape()[1] == 3 && self.error.shape()[1] == 3 && self.disparity.shape()[1] == 1,
            "attention input channel layout must be 3|3|3|1"
        );
        concat(
            &[self.left.clone(), self.right.clone(), self.error.clone(), self.disparity.clone()],
            1,
        )
    }
}

/// 1×1 → 3×3 → 1×1 convolutions ending in a single logit channel.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub reduce: Conv2dLayer,
    pub spatial: Conv2dLayer,
    pub project: Conv2dLayer,
}

/// Pre-sigmoid attention logits `[N,1,h,w]` from the 10-channel input.
pub fn attention_vector(input: &Var, params: &AttentionParams) -> Result<Var> {
    ensure!(
        params.project.weight.shape()[0] == 1,
        "attention output layer must have one channel"
    );
    let x = leaky_relu(&params.reduce.same(input)?, LEAKY_SLOPE)?;
    let x = leaky_relu(&params.spatial.same(&x)?, LEAKY_SLOPE)?;
    params.project.same(&x)
}

/// `f_r ⊗ σ(logits)` with the gate broadcast over channels.
pub fn apply_attention(f_r: &Var, logits: &Var) -> Result<Var> {
    ensure!(
        logits.shape().len() == 4 && logits.shape()[1] == 1,
        "attention logits must be [N,1,h,w], got {:?}",
        logits.shape()
    );
    mul_channel_broadcast(f_r, &sigmoid(logits)?)
}

/// Encoder-decoder residual regressor at fixed channel width.
#[derive(Clone, Debug)]
pub struct HourglassParams {
    pub down1: Conv2dLayer,
    pub down2: Conv2dLayer,
    pub up1: Deconv2dLayer,
    pub up2: Deconv2dLayer,
    pub head: Conv2dLayer,
    pub out: Conv2dLayer,
}

#[derive(Clone, Debug)]
pub struct HourglassOutput {
    /// `[N,1,h,w]`, unbounded sign.
    pub residual: Var,
    /// Decoder features at input resolution, `[N,C,h,w]`.
    pub features: Var,
}

pub fn hourglass2d_with_features(x: &Var, params: &HourglassParams) -> Result<HourglassOutput> {
    let s = x.shape();
    ensure!(s.len() == 4, "hourglass input must be [N,C,h,w], got {s:?}");
    ensure!(
        s[2] % 4 == 0 && s[3] % 4 == 0,
        "hourglass needs extents divisible by 4, got {}x{}",
        s[2],
        s[3]
    );
    let down = |layer: &Conv2dLayer, v: &Var| -> Result<Var> {
        leaky_relu(&layer.forward(v, ConvSpec::new(2, layer.kernel() / 2))?, LEAKY_SLOPE)
    };
    let e1 = down(&params.down1, x)?;
    let e2 = down(&params.down2, &e1)?;
    let d1 = add(&leaky_relu(&params.up1.forward(&e2)?, LEAKY_SLOPE)?, &e1)?;
    let d0 = add(&leaky_relu(&params.up2.forward(&d1)?, LEAKY_SLOPE)?, x)?;
    let h = leaky_relu(&params.head.same(&d0)?, LEAKY_SLOPE)?;
    let residual = params.out.same(&h)?;
    Ok(HourglassOutput { residual, features: d0 })
}

/// Single-channel residual map at the input resolution.
pub fn hourglass2d(x: &Var, params: &HourglassParams) -> Result<Var> {
    Ok(hourglass2d_with_features(x, params)?.residual)
}

/// Upsamples the coarser disparity by one octave, doubles its values into the
/// finer grid's pixel units and adds the residual.
pub fn compose_disparity(d_prev: &Var, residual: &Var) -> Result<Var> {
    let (p, r) = (d_prev.shape(), residual.shape());
    ensure!(
        p.len() == 4 && r.len() == 4 && p[1] == 1 && r[1] == 1 && p[0] == r[0],
        "compose_disparity expects [N,1,h,w] maps, got {p:?} and {r:?}"
    );
    ensure!(
        r[2] == 2 * p[2] && r[3] == 2 * p[3],
        "residual {}x{} is not twice the coarse extent {}x{}",
        r[2],
        r[3],
        p[2],
        p[3]
    );
    let up = upsample_disparity(d_prev)?;
    add(&up, residual)
}

/// One-octave bilinear upsampling with value doubling.
pub fn upsample_disparity(d: &Var) -> Result<Var> {
    let s = d.shape();
    scale(&bilinear_upsample(d, 2 * s[2], 2 * s[3])?, 2.0)
}
