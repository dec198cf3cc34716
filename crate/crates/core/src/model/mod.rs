//! Network assembly: shared encoder, combined cost volume at 1/8 scale, 2D
//! aggregation head and three refinement stages producing a 4-scale pyramid.

mod config;
mod forward;
mod params;

pub use config::{ModelConfig, ResidualMode, Variant, Widths, FEATURE_STRIDE, NUM_SCALES};
pub use forward::{build_cost_volume, encode, forward, DisparityPyramid, EncoderFeatures};
pub use params::{layer_specs, BoundParams, LayerKind, LayerSpec, ModelParams};

use crate::error::Result;
use crate::tensor::{Tensor, Var};

/// Full-resolution disparity without recording a gradient graph.
pub fn infer(params: &ModelParams, left: &Tensor, right: &Tensor) -> Result<Tensor> {
    let bound = params.bind(false);
    let left = Var::constant(left.clone());
    let right = Var::constant(right.clone());
    let mut pyramid = forward(&bound, &left, &right)?;
    let full = pyramid.disparities.swap_remove(0);
    drop(pyramid);
    Ok(full.value().clone())
}
