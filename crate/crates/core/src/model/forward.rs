use super::config::ResidualMode;
use super::params::BoundParams;
use crate::attention::{
    apply_attention, attention_vector, compose_disparity, hourglass2d_with_features, upsample_disparity,
    AttentionInput,
};
use crate::cost_volume::{combine, concat_volume, correlation_volume, squeeze_aggregate, CostVolume};
use crate::error::{ensure, Error, Result};
use crate::tensor::{concat, leaky_relu, ConvSpec, Tensor, Var, LEAKY_SLOPE};
use crate::warp::{downsample_image, error_map, warp_right_to_left, ErrorMap};

/// Disparity estimates at full, 1/2, 1/4 and 1/8 resolution (index = scale),
/// each in its own grid's pixel units.
#[derive(Clone, Debug)]
pub struct DisparityPyramid {
    pub disparities: Vec<Var>,
    /// Residuals at scales 0..=2; empty when the decoder regresses directly.
    pub residuals: Vec<Var>,
    pub error_maps: Vec<ErrorMap>,
    /// Sigmoid attention gates at scales 0..=2; empty without attention.
    pub gates: Vec<Var>,
    pub cost_volume: CostVolume,
}

/// Shared encoder activations of one view.
#[derive(Clone, Debug)]
pub struct EncoderFeatures {
    /// Half resolution.
    pub conv1: Var,
    /// Quarter resolution.
    pub conv2: Var,
    /// Eighth resolution, the cost-volume input.
    pub conv3: Var,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Numeric { stage, detail } => Error::Numeric { stage: format!("{name}/{stage}"), detail },
        other => other,
    })
}

fn check_finite(name: &str, v: &Var) -> Result<()> {
    if cfg!(debug_assertions) && !v.value().all_finite() {
        return Err(Error::Numeric { stage: name.to_string(), detail: "non-finite activation".into() });
    }
    Ok(())
}

fn act(v: Var) -> Result<Var> {
    leaky_relu(&v, LEAKY_SLOPE)
}

pub fn encode(params: &BoundParams, image: &Var) -> Result<EncoderFeatures> {
    stage("encoder", (|| {
        let conv = |name: &str, x: &Var, stride: usize| -> Result<Var> {
            let layer = params.conv2d(name)?;
            act(layer.forward(x, ConvSpec::new(stride, layer.kernel() / 2))?)
        };
        let c1 = conv("enc.conv1b", &conv("enc.conv1", image, 2)?, 1)?;
        let c2 = conv("enc.conv2b", &conv("enc.conv2", &c1, 2)?, 1)?;
        let c3 = conv("enc.conv3b", &conv("enc.conv3", &c2, 2)?, 1)?;
        Ok(EncoderFeatures { conv1: c1, conv2: c2, conv3: c3 })
    })())
}

/// Cost volume on the 1/8-scale features according to the variant toggles.
pub fn build_cost_volume(params: &BoundParams, f_left: &Var, f_right: &Var) -> Result<CostVolume> {
    let cfg = params.config();
    let levels = cfg.disparity_levels();
    let v = cfg.variant;
    v.validate()?;
    let corr = v.correlation.then(|| correlation_volume(f_left, f_right, levels)).transpose()?;
    let squeezed = if v.squeezed_concat {
        Some(squeeze_aggregate(&concat_volume(f_left, f_right, levels)?, &params.squeeze()?)?)
    } else {
        None
    };
    match (corr, squeezed) {
        (Some(c), Some(s)) => combine(&c, &s),
        (Some(c), None) => Ok(c),
        (None, Some(s)) => Ok(s),
        (None, None) => unreachable!("validated above"),
    }
}

/// Runs the network on a normalized stereo pair `[N,3,H,W]`.
pub fn forward(params: &BoundParams, left: &Var, right: &Var) -> Result<DisparityPyramid> {
    let cfg = params.config().clone();
    let s = left.shape();
    ensure!(
        s.len() == 4 && s[1] == 3,
        "left image must be [N,3,H,W], got {s:?}"
    );
    ensure!(
        right.shape() == s,
        "right image shape {:?} differs from left {s:?}",
        right.shape()
    );
    cfg.validate_extent(s[2], s[3])?;
    let variant = cfg.variant;

    let feat_l = encode(params, left)?;
    let feat_r = encode(params, right)?;
    check_finite("encoder", &feat_l.conv3)?;

    let volume = stage("cost_volume", build_cost_volume(params, &feat_l.conv3, &feat_r.conv3))?;
    check_finite("cost_volume", &volume.data)?;

    let (mut features, mut disparity) = stage("aggregation", (|| {
        let x = act(params.conv2d("agg.0")?.same(&volume.data)?)?;
        let x = act(params.conv2d("agg.1")?.same(&x)?)?;
        let d = params.conv2d("agg.pred")?.same(&x)?;
        Ok((x, d))
    })())?;
    check_finite("aggregation", &disparity)?;

    let mut disparities = vec![disparity.clone()];
    let mut residuals = Vec::new();
    let mut error_maps = Vec::new();
    let mut gates = Vec::new();
    for scale in (0..3).rev() {
        let name = ["refine0", "refine1", "refine2"][scale];
        let out = stage(name, (|| {
            let left_s = downsample_image(left, scale)?;
            let right_s = downsample_image(right, scale)?;
            let up = act(params.deconv2d(&format!("{}.up", super::params::SCALE_NAMES[scale]))?.forward(&features)?)?;
            let d_up = upsample_disparity(&disparity)?;
            let (warped, mask) = warp_right_to_left(&right_s, &d_up)?;
            let err = error_map(&warped, &left_s, &mask, scale)?;
            let err_input = if variant.error_maps[scale] {
                err.data.clone()
            } else {
                Var::constant(Tensor::zeros(err.data.shape()))
            };
            let att_in = AttentionInput {
                left: left_s,
                right: right_s,
                error: err_input,
                disparity: d_up,
            }
            .concatenated()?;
            let mut parts = vec![up];
            match scale {
                2 => parts.push(feat_l.conv2.clone()),
                1 => parts.push(feat_l.conv1.clone()),
                _ => {}
            }
            parts.push(att_in.clone());
            let f_r = concat(&parts, 1)?;
            let (hg_in, gate) = match variant.residual {
                ResidualMode::Attention => {
                    let logits = attention_vector(&att_in, &params.attention(scale)?)?;
                    let f_ar = apply_attention(&f_r, &logits)?;
                    (f_ar, Some(crate::tensor::sigmoid(&logits)?))
                }
                _ => (f_r, None),
            };
            let hg = hourglass2d_with_features(&hg_in, &params.hourglass(scale)?)?;
            let (d, residual) = match variant.residual {
                ResidualMode::None => (hg.residual, None),
                _ => (compose_disparity(&disparity, &hg.residual)?, Some(hg.residual)),
            };
            Ok((d, residual, err, gate, hg.features))
        })())?;
        let (d, residual, err, gate, feats) = out;
        check_finite(name, &d)?;
        disparity = d;
        features = feats;
        disparities.push(disparity.clone());
        residuals.extend(residual);
        error_maps.push(err);
        gates.extend(gate);
    }
    disparities.reverse();
    residuals.reverse();
    error_maps.reverse();
    gates.reverse();
    Ok(DisparityPyramid { disparities, residuals, error_maps, gates, cost_volume: volume })
}
