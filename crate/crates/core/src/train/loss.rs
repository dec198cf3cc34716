use crate::error::{ensure, invalid, Result};
use crate::model::{DisparityPyramid, NUM_SCALES};
use crate::tensor::{add, scale, smooth_l1_masked, Tensor, Var};
use crate::warp::downsample_mask;

/// Per-scale loss weights, index = scale (0 = full resolution).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights(pub [f64; NUM_SCALES]);

impl LossWeights {
    /// Emphasis on fine scales.
    pub const SCENE_FLOW: LossWeights = LossWeights([1.0, 0.8, 0.8, 0.6]);
    /// Emphasis on the coarse scale.
    pub const KITTI: LossWeights = LossWeights([0.6, 0.8, 0.8, 1.0]);

    pub fn preset(name: &str) -> Result<LossWeights> {
        match name {
            "sceneflow" => Ok(Self::SCENE_FLOW),
            "kitti" => Ok(Self::KITTI),
            other => Err(invalid!("unknown loss-weight preset `{other}`")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.0.iter().all(|w| w.is_finite() && *w >= 0.0),
            "loss weights must be finite and non-negative: {:?}",
            self.0
        );
        ensure!(self.0.iter().any(|&w| w > 0.0), "at least one loss weight must be positive");
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> LossWeights {
        LossWeights(self.0.map(|w| w * k))
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::SCENE_FLOW
    }
}

/// Ground truth resampled onto every pyramid scale.
#[derive(Clone, Debug)]
pub struct ScaledTargets {
    pub disparity: Vec<Tensor>,
    pub mask: Vec<Tensor>,
}

impl ScaledTargets {
    /// Average-pools the disparity (values ÷2 per octave); a coarse pixel is
    /// valid only if all of its source pixels are valid. Invalid source
    /// pixels do not leak into valid pooled values because such coarse
    /// pixels are masked out.
    pub fn new(gt: &Tensor, mask: &Tensor) -> Result<Self> {
        ensure!(
            gt.shape() == mask.shape() && gt.ndim() == 4 && gt.shape()[1] == 1,
            "ground truth and mask must both be [N,1,H,W]: {:?} vs {:?}",
            gt.shape(),
            mask.shape()
        );
        let clean = gt.zip_map(mask, |d, m| if m > 0.0 { d } else { 0.0 })?;
        let gt_var = Var::constant(clean);
        let mut disparity = Vec::with_capacity(NUM_SCALES);
        let mut masks = Vec::with_capacity(NUM_SCALES);
        for s in 0..NUM_SCALES {
            disparity.push(crate::warp::downsample_disparity(&gt_var, s)?.value().clone());
            masks.push(downsample_mask(mask, s)?);
        }
        Ok(Self { disparity, mask: masks })
    }
}

#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub total: Var,
    /// Unweighted smooth-L1 value per scale (0 where the scale was skipped).
    pub per_scale: [f64; NUM_SCALES],
}

/// `Σ_s λ_s · L_s` with `L_s` the mean smooth-L1 penalty over valid pixels of
/// scale `s`. Scales with zero weight or no valid pixel are skipped.
pub fn multiscale_loss(
    pyramid: &DisparityPyramid,
    targets: &ScaledTargets,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    ensure!(
        pyramid.disparities.len() == NUM_SCALES && targets.disparity.len() == NUM_SCALES,
        "pyramid and targets must both have {NUM_SCALES} scales"
    );
    ensure!(
        targets.mask.iter().any(|m| m.data().iter().any(|&v| v > 0.0)),
        "no valid ground-truth pixel at any scale"
    );
    let mut total: Option<Var> = None;
    let mut per_scale = [0.0; NUM_SCALES];
    for s in 0..NUM_SCALES {
        let mask = &targets.mask[s];
        if weights.0[s] == 0.0 || !mask.data().iter().any(|&v| v > 0.0) {
            continue;
        }
        let l = smooth_l1_masked(&pyramid.disparities[s], &targets.disparity[s], mask)?;
        per_scale[s] = l.value().data()[0];
        let weighted = scale(&l, weights.0[s])?;
        total = Some(match total {
            Some(t) => add(&t, &weighted)?,
            None => weighted,
        });
    }
    let total = total.ok_or_else(|| invalid!("every weighted scale has an empty mask"))?;
    Ok(LossBreakdown { total, per_scale })
}
