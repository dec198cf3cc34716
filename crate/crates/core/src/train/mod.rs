//! Multi-scale supervision, optimization, synthetic data, metrics and the
//! ablation harnesses.

mod ablation;
mod adam;
mod data;
mod loss;
mod metrics;
mod normalize;
mod schedule;
mod trainer;

pub use ablation::{error_map_study, run_ablation, standard_variants, AblationReport, AblationRow, ErrorMapComparison};
pub use adam::OptimizerState;
pub use data::{generate_rds, Batch, DisparitySpec, Patch, Plane, StereoSample, StreamChecksum, SyntheticDataset};
pub use loss::{multiscale_loss, LossBreakdown, LossWeights, ScaledTargets};
pub use metrics::{d1_all, epe, pixel_error_rate, MetricAccumulator, Metrics};
pub use normalize::{denormalize_colors, normalize_colors, IMAGENET_MEAN, IMAGENET_STD};
pub use schedule::{lr_schedule, ScheduleMode};
pub use trainer::{evaluate, predict, train, zero_baseline, StepRecord, TrainConfig, TrainOutcome, Trainer};
