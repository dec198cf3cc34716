use std::fmt;
use std::str::FromStr;

use crate::attention::ATTENTION_INPUT_CHANNELS;
use crate::error::{ensure, invalid, Error, Result};

/// Downsampling factor between the input and the cost-volume features.
pub const FEATURE_STRIDE: usize = 8;
/// Pyramid scales: full, 1/2, 1/4 and 1/8 resolution.
pub const NUM_SCALES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualMode {
    /// Every decoder scale regresses disparity directly.
    None,
    /// Residual refinement without the attention gate.
    Plain,
    /// Residual refinement on attention-gated features.
    Attention,
}

impl ResidualMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ResidualMode::None => "none",
            ResidualMode::Plain => "plain",
            ResidualMode::Attention => "attention",
        }
    }
}

impl FromStr for ResidualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ResidualMode::None),
            "plain" => Ok(ResidualMode::Plain),
            "attention" => Ok(ResidualMode::Attention),
            other => Err(invalid!("unknown residual mode `{other}`")),
        }
    }
}

/// Architecture toggles used by the ablation harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub correlation: bool,
    pub squeezed_concat: bool,
    pub residual: ResidualMode,
    /// Whether the error map is fed to the decoder at scales 0, 1, 2.
    pub error_maps: [bool; 3],
}

impl Variant {
    pub const FULL: Variant = Variant {
        correlation: true,
        squeezed_concat: true,
        residual: ResidualMode::Attention,
        error_maps: [true; 3],
    };

    /// The six ablation rows, in report order.
    pub const ABLATION_ROWS: [&'static str; 6] =
        ["EDNet-NRS", "EDNet-NRCo", "EDNet-NR", "EDNet-NA", "EDNet-NS", "EDNet-F"];

    pub fn named(name: &str) -> Result<Variant> {
        let base = Variant::FULL;
        let v = match name {
            "EDNet-NRS" => Variant { squeezed_concat: false, residual: ResidualMode::None, ..base },
            "EDNet-NRCo" => Variant { correlation: false, residual: ResidualMode::None, ..base },
            "EDNet-NR" => Variant { residual: ResidualMode::None, ..base },
            "EDNet-NA" => Variant { residual: ResidualMode::Plain, ..base },
            "EDNet-NS" => Variant { squeezed_concat: false, ..base },
            "EDNet-F" => base,
            other => return Err(invalid!("unknown variant `{other}`")),
        };
        Ok(v)
    }

    /// Error maps only at the scales `0..=max_scale`, none elsewhere.
    pub fn with_error_maps_up_to(self, max_scale: Option<usize>) -> Variant {
        let mut error_maps = [false; 3];
        if let Some(m) = max_scale {
            for (s, e) in error_maps.iter_mut().enumerate() {
                *e = s <= m;
            }
        }
        Variant { error_maps, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.correlation || self.squeezed_concat,
            "at least one cost volume must be enabled"
        );
        Ok(())
    }

    /// Channel count of the cost volume for `levels` disparity levels.
    pub fn volume_channels(&self, levels: usize) -> usize {
        levels * (usize::from(self.correlation) + usize::from(self.squeezed_concat))
    }
}

impl Default for Variant {
    fn default() -> Self {
        Variant::FULL
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Largest disparity in full-resolution pixels.
    pub max_disparity: usize,
    pub width_multiplier: f64,
    pub input_height: usize,
    pub input_width: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            max_disparity: 192,
            width_multiplier: 0.25,
            input_height: 320,
            input_width: 640,
            seed: 0,
            variant: Variant::FULL,
        }
    }
}

/// Channel widths derived from the width multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Widths {
    pub conv1: usize,
    pub conv2: usize,
    pub conv3: usize,
    pub aggregation: usize,
    pub attention: usize,
    /// Upconvolution output width at scales 0, 1, 2.
    pub upconv: [usize; 3],
}

impl Widths {
    /// Encoder skip channels joined at scales 0, 1, 2.
    pub fn skip(&self) -> [usize; 3] {
        [0, self.conv1, self.conv2]
    }

    /// Residual feature channels at scales 0, 1, 2.
    pub fn residual(&self) -> [usize; 3] {
        let skip = self.skip();
        [0, 1, 2].map(|s| self.upconv[s] + skip[s] + ATTENTION_INPUT_CHANNELS)
    }
}

impl ModelConfig {
    /// Desk-scale configuration for random-dot training at 64×128.
    pub fn desk() -> Self {
        Self { max_disparity: 32, input_height: 64, input_width: 128, ..Self::default() }
    }

    pub fn disparity_levels(&self) -> usize {
        self.max_disparity / FEATURE_STRIDE
    }

    pub fn widths(&self) -> Widths {
        let w = |base: f64| ((base * self.width_multiplier).round() as usize).max(1);
        let conv1 = w(64.0);
        let conv2 = w(128.0);
        let conv3 = w(256.0);
        Widths {
            conv1,
            conv2,
            conv3,
            aggregation: conv3,
            attention: conv1,
            upconv: [w(32.0), conv1, conv2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.max_disparity >= FEATURE_STRIDE && self.max_disparity % FEATURE_STRIDE == 0,
            "max_disparity {} must be a positive multiple of {FEATURE_STRIDE}",
            self.max_disparity
        );
        ensure!(
            self.width_multiplier.is_finite() && self.width_multiplier > 0.0,
            "width_multiplier must be positive"
        );
        self.validate_extent(self.input_height, self.input_width)?;
        self.variant.validate()
    }

    /// Checks that an input of `height × width` can run through the network.
    pub fn validate_extent(&self, height: usize, width: usize) -> Result<()> {
        ensure!(
            height > 0 && width > 0 && height % FEATURE_STRIDE == 0 && width % FEATURE_STRIDE == 0,
            "input extent {height}x{width} must be positive multiples of {FEATURE_STRIDE}"
        );
        ensure!(
            self.disparity_levels() <= width / FEATURE_STRIDE,
            "{} disparity levels exceed feature width {}",
            self.disparity_levels(),
            width / FEATURE_STRIDE
        );
        Ok(())
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "corr={} sconcat={} residual={} error_maps={:?}",
            self.correlation,
            self.squeezed_concat,
            self.residual.as_str(),
            self.error_maps
        )
    }
}
