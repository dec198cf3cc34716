use std::fmt::Write as _;

use super::data::StreamChecksum;
use super::metrics::Metrics;
use super::trainer::{evaluate, train, StepRecord, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::model::{ModelConfig, Variant};

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub variant: Variant,
    pub metrics: Metrics,
    pub final_loss: f64,
    pub checksum: StreamChecksum,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12} {:>8} {:>8} {:>8}\n", "variant", "EPE", ">1px", ">3px");
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(out, "{:<12} {:>8.3} {:>7.2}% {:>7.2}%", r.name, m.epe, m.px1, m.px3);
        }
        out
    }
}

/// Trains every `(name, variant)` on the identical data stream and reports
/// validation metrics. Rows with the standard variant names come out in the
/// canonical order; any others follow in input order.
pub fn run_ablation(
    base: &ModelConfig,
    config: &TrainConfig,
    variants: &[(String, Variant)],
) -> Result<AblationReport> {
    if variants.is_empty() {
        return Err(invalid!("no ablation variants given"));
    }
    for (name, v) in variants {
        v.validate().map_err(|e| invalid!("variant `{name}`: {e}"))?;
    }
    let mut ordered: Vec<&(String, Variant)> = variants.iter().collect();
    ordered.sort_by_key(|(name, _)| {
        Variant::ABLATION_ROWS.iter().position(|r| r == name).unwrap_or(Variant::ABLATION_ROWS.len())
    });
    let mut rows = Vec::with_capacity(ordered.len());
    for (name, variant) in ordered {
        let model = ModelConfig { variant: *variant, ..base.clone() };
        let outcome = train(&model, config, |_| Ok(()))?;
        let (_, val) = config.datasets(&model)?;
        rows.push(AblationRow {
            name: name.clone(),
            variant: *variant,
            metrics: evaluate(&outcome.params, &val, 4)?,
            final_loss: outcome.records.last().map_or(f64::NAN, |r| r.loss),
            checksum: outcome.checksum,
        });
    }
    if rows.iter().any(|r| r.checksum != rows[0].checksum) {
        return Err(Error::InvalidState("ablation variants consumed different data streams".into()));
    }
    Ok(AblationReport { rows })
}

/// The six standard variants by name.
pub fn standard_variants() -> Vec<(String, Variant)> {
    Variant::ABLATION_ROWS
        .iter()
        .map(|n| (n.to_string(), Variant::named(n).expect("standard name")))
        .collect()
}

/// Training curves of one seed with error maps at every refinement scale
/// versus at full resolution only.
#[derive(Clone, Debug)]
pub struct ErrorMapComparison {
    pub seed: u64,
    pub multi_scale: Vec<StepRecord>,
    pub full_res_only: Vec<StepRecord>,
    pub multi_scale_epe: f64,
    pub full_res_only_epe: f64,
}

impl ErrorMapComparison {
    /// Whether multi-scale error maps reached the lower validation EPE.
    pub fn multi_scale_wins(&self) -> bool {
        self.multi_scale_epe <= self.full_res_only_epe
    }
}

pub fn error_map_study(base: &ModelConfig, config: &TrainConfig, seeds: &[u64]) -> Result<Vec<ErrorMapComparison>> {
    if seeds.is_empty() {
        return Err(invalid!("no seeds given"));
    }
    seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig { data_seed: seed, ..config.clone() };
            let run = |max_scale: usize| -> Result<(Vec<StepRecord>, f64)> {
                let model = ModelConfig {
                    seed,
                    variant: base.variant.with_error_maps_up_to(Some(max_scale)),
                    ..base.clone()
                };
                let outcome = train(&model, &cfg, |_| Ok(()))?;
                let (_, val) = cfg.datasets(&model)?;
                Ok((outcome.records, evaluate(&outcome.params, &val, 4)?.epe))
            };
            let (multi_scale, multi_scale_epe) = run(2)?;
            let (full_res_only, full_res_only_epe) = run(0)?;
            Ok(ErrorMapComparison { seed, multi_scale, full_res_only, multi_scale_epe, full_res_only_epe })
        })
        .collect()
}
