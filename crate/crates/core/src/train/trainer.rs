use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::adam::OptimizerState;
use super::data::{Batch, StreamChecksum, SyntheticDataset};
use super::loss::{multiscale_loss, LossWeights, ScaledTargets};
use super::metrics::{epe, MetricAccumulator, Metrics};
use super::normalize::normalize_colors;
use super::schedule::{lr_schedule, ScheduleMode};
use crate::error::{ensure, Result};
use crate::model::{forward, infer, ModelConfig, ModelParams, NUM_SCALES};
use crate::tensor::{backward, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub schedule: ScheduleMode,
    pub weights: LossWeights,
    pub data_seed: u64,
    pub train_samples: usize,
    pub val_samples: usize,
    /// Largest disparity drawn by the data generator.
    pub data_max_disparity: f64,
    /// Validation EPE is logged every this many steps (0 = never).
    pub eval_every: usize,
    /// Size of the fixed validation batch used for logging.
    pub log_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 1,
            base_lr: 1e-3,
            schedule: ScheduleMode::SceneFlow,
            weights: LossWeights::SCENE_FLOW,
            data_seed: 0,
            train_samples: 2000,
            val_samples: 200,
            data_max_disparity: 16.0,
            eval_every: 250,
            log_batch: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size > 0, "batch_size must be positive");
        ensure!(self.base_lr.is_finite() && self.base_lr > 0.0, "base_lr must be positive");
        ensure!(self.train_samples > 0 && self.val_samples > 0, "sample counts must be positive");
        ensure!(self.log_batch > 0, "log_batch must be positive");
        self.weights.validate()
    }

    pub fn datasets(&self, model: &ModelConfig) -> Result<(SyntheticDataset, SyntheticDataset)> {
        ensure!(
            self.data_max_disparity <= model.max_disparity as f64,
            "data disparities up to {} exceed the model range {}",
            self.data_max_disparity,
            model.max_disparity
        );
        let train = SyntheticDataset::new(
            self.data_seed,
            self.train_samples,
            model.input_height,
            model.input_width,
            self.data_max_disparity,
        )?;
        let val = train.companion(self.val_samples)?;
        Ok((train, val))
    }

    fn steps_per_epoch(&self) -> usize {
        self.train_samples.div_ceil(self.batch_size)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub scale_loss: [f64; NUM_SCALES],
    pub val_epe: Option<f64>,
}

impl StepRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record fields serialize")
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub records: Vec<StepRecord>,
    pub checksum: StreamChecksum,
    pub elapsed: Duration,
}

/// Normalizes a batch and runs one differentiable forward pass.
fn batch_inputs(batch: &Batch) -> Result<(Var, Var)> {
    Ok((
        Var::constant(normalize_colors(&batch.left)?),
        Var::constant(normalize_colors(&batch.right)?),
    ))
}

/// Full-resolution predictions for a raw (unnormalized) batch.
pub fn predict(params: &ModelParams, batch: &Batch) -> Result<Tensor> {
    infer(params, &normalize_colors(&batch.left)?, &normalize_colors(&batch.right)?)
}

/// Pixel-pooled metrics over every sample of `dataset`.
pub fn evaluate(params: &ModelParams, dataset: &SyntheticDataset, batch_size: usize) -> Result<Metrics> {
    let mut acc = MetricAccumulator::default();
    let indices: Vec<usize> = (0..dataset.len).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = dataset.batch(chunk)?;
        acc.add(&predict(params, &batch)?, &batch.gt_disparity, &batch.valid_mask)?;
    }
    acc.finish()
}

/// Metrics of the all-zero prediction.
pub fn zero_baseline(dataset: &SyntheticDataset) -> Result<Metrics> {
    let mut acc = MetricAccumulator::default();
    for i in 0..dataset.len {
        let s = dataset.sample(i)?;
        acc.add(&Tensor::zeros(s.gt_disparity.shape()), &s.gt_disparity, &s.valid_mask)?;
    }
    acc.finish()
}

/// Owns parameters and optimizer state; steps are exclusive over both.
pub struct Trainer {
    params: ModelParams,
    optimizer: OptimizerState,
    config: TrainConfig,
    train: SyntheticDataset,
    val: SyntheticDataset,
    log_batch: Batch,
    order: Vec<usize>,
    step: usize,
    checksum: StreamChecksum,
}

impl Trainer {
    pub fn new(model: &ModelConfig, config: TrainConfig) -> Result<Self> {
        Self::from_params(ModelParams::build(model)?, config)
    }

    pub fn from_params(params: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (train, val) = config.datasets(params.config())?;
        let log_indices: Vec<usize> = (0..config.log_batch.min(val.len)).collect();
        let log_batch = val.batch(&log_indices)?;
        Ok(Self {
            optimizer: OptimizerState::new(config.base_lr),
            params,
            config,
            train,
            val,
            log_batch,
            order: Vec::new(),
            step: 0,
            checksum: StreamChecksum::default(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn validation_set(&self) -> &SyntheticDataset {
        &self.val
    }

    pub fn checksum(&self) -> StreamChecksum {
        self.checksum
    }

    fn epoch(&self) -> usize {
        self.step / self.config.steps_per_epoch()
    }

    fn next_indices(&mut self) -> Vec<usize> {
        let per_epoch = self.config.steps_per_epoch();
        let within = self.step % per_epoch;
        if within == 0 || self.order.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.data_seed);
            rng.set_stream(self.epoch() as u64);
            self.order = (0..self.train.len).collect();
            self.order.shuffle(&mut rng);
        }
        let start = within * self.config.batch_size;
        let end = (start + self.config.batch_size).min(self.order.len());
        self.order[start..end].to_vec()
    }

    /// EPE of the current parameters on the fixed validation batch.
    pub fn log_batch_epe(&self) -> Result<f64> {
        let b = &self.log_batch;
        epe(&predict(&self.params, b)?, &b.gt_disparity, &b.valid_mask)
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let epoch = self.epoch();
        let lr = lr_schedule(epoch, self.config.base_lr, self.config.schedule);
        self.optimizer.lr = lr;
        let indices = self.next_indices();
        let batch = self.train.batch(&indices)?;
        self.checksum.update(&batch.left);
        self.checksum.update(&batch.gt_disparity);

        let bound = self.params.bind(true);
        let (left, right) = batch_inputs(&batch)?;
        let pyramid = forward(&bound, &left, &right)?;
        let targets = ScaledTargets::new(&batch.gt_disparity, &batch.valid_mask)?;
        let loss = multiscale_loss(&pyramid, &targets, &self.config.weights)?;
        backward(&loss.total)?;
        let grads = bound.grads()?;
        drop(pyramid);
        drop(bound);
        self.optimizer.adam_step(&mut self.params, &grads)?;
        self.step += 1;

        let eval = self.config.eval_every;
        let val_epe = if eval > 0 && (self.step % eval == 0 || self.step == self.config.steps) {
            Some(self.log_batch_epe()?)
        } else {
            None
        };
        Ok(StepRecord {
            step: self.step,
            epoch,
            lr,
            loss: loss.total.value().data()[0],
            scale_loss: loss.per_scale,
            val_epe,
        })
    }

    /// Runs the configured number of steps, passing each record to `on_record`.
    pub fn run(mut self, mut on_record: impl FnMut(&StepRecord) -> Result<()>) -> Result<TrainOutcome> {
        let start = Instant::now();
        let mut records = Vec::with_capacity(self.config.steps);
        while self.step < self.config.steps {
            let r = self.step()?;
            on_record(&r)?;
            records.push(r);
        }
        Ok(TrainOutcome {
            params: self.params,
            records,
            checksum: self.checksum,
            elapsed: start.elapsed(),
        })
    }
}

/// Trains `model` from scratch under `config`.
pub fn train(
    model: &ModelConfig,
    config: &TrainConfig,
    on_record: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    Trainer::new(model, config.clone())?.run(on_record)
}
