use std::str::FromStr;

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleMode {
    /// Constant for 20 epochs, then halved every 10 epochs.
    SceneFlow,
    Kitti,
}

impl ScheduleMode {
    pub fn default_base_lr(self) -> f64 {
        match self {
            ScheduleMode::SceneFlow => 1e-3,
            ScheduleMode::Kitti => 1e-4,
        }
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sceneflow" => Ok(ScheduleMode::SceneFlow),
            "kitti" => Ok(ScheduleMode::Kitti),
            other => Err(invalid!("unknown schedule `{other}`")),
        }
    }
}

/// Learning rate for `epoch` (0-based). Halvings take effect at epochs 20,
/// 30, 40, ... in scene-flow mode.
pub fn lr_schedule(epoch: usize, base_lr: f64, mode: ScheduleMode) -> f64 {
    match mode {
        ScheduleMode::Kitti => base_lr,
        ScheduleMode::SceneFlow if epoch < 20 => base_lr,
        ScheduleMode::SceneFlow => base_lr * 0.5f64.powi(((epoch - 20) / 10 + 1) as i32),
    }
}
