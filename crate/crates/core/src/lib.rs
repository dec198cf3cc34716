//! Stereo disparity estimation on the CPU: a minimal reverse-mode tensor
//! library, cost-volume construction, attention-gated residual refinement,
//! training utilities on synthetic random-dot stereo, file formats and
//! analytic cost accounting.

pub mod attention;
pub mod cli;
pub mod cost;
pub mod cost_volume;
pub mod error;
pub mod io;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;
pub mod warp;

pub use error::{Error, Result};
pub use tensor::{Tensor, Var};
