//! Disparity accuracy metrics over the valid (`mask > 0`) pixels.

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

fn valid_errors<'a>(pred: &'a Tensor, gt: &'a Tensor, mask: &'a Tensor) -> Result<Vec<(f64, f64)>> {
    ensure!(
        pred.shape() == gt.shape() && gt.shape() == mask.shape(),
        "metric inputs differ in shape: {:?}, {:?}, {:?}",
        pred.shape(),
        gt.shape(),
        mask.shape()
    );
    let pairs: Vec<(f64, f64)> = pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(mask.data())
        .filter(|(_, &m)| m > 0.0)
        .map(|((p, g), _)| ((p - g).abs(), *g))
        .collect();
    ensure!(!pairs.is_empty(), "mask selects no pixel");
    Ok(pairs)
}

/// Mean absolute disparity error in pixels.
pub fn epe(pred: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<f64> {
    let e = valid_errors(pred, gt, mask)?;
    Ok(e.iter().map(|(err, _)| err).sum::<f64>() / e.len() as f64)
}

/// Percentage of valid pixels whose error exceeds `threshold` pixels.
pub fn pixel_error_rate(pred: &Tensor, gt: &Tensor, mask: &Tensor, threshold: f64) -> Result<f64> {
    ensure!(threshold > 0.0, "threshold must be positive, got {threshold}");
    let e = valid_errors(pred, gt, mask)?;
    let bad = e.iter().filter(|(err, _)| *err > threshold).count();
    Ok(100.0 * bad as f64 / e.len() as f64)
}

/// Percentage of valid pixels whose error exceeds both 3 px and 5% of the
/// true disparity.
pub fn d1_all(pred: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<f64> {
    let e = valid_errors(pred, gt, mask)?;
    let bad = e.iter().filter(|(err, g)| *err > 3.0 && *err > 0.05 * g.abs()).count();
    Ok(100.0 * bad as f64 / e.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub epe: f64,
    pub px1: f64,
    pub px3: f64,
    pub d1_all: f64,
}

impl Metrics {
    pub fn compute(pred: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<Metrics> {
        Ok(Metrics {
            epe: epe(pred, gt, mask)?,
            px1: pixel_error_rate(pred, gt, mask, 1.0)?,
            px3: pixel_error_rate(pred, gt, mask, 3.0)?,
            d1_all: d1_all(pred, gt, mask)?,
        })
    }
}

/// Pixel-pooled metric accumulator across many images.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    count: usize,
    abs_sum: f64,
    over1: usize,
    over3: usize,
    d1: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, pred: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<()> {
        for (err, g) in valid_errors(pred, gt, mask)? {
            self.count += 1;
            self.abs_sum += err;
            self.over1 += usize::from(err > 1.0);
            self.over3 += usize::from(err > 3.0);
            self.d1 += usize::from(err > 3.0 && err > 0.05 * g.abs());
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<Metrics> {
        ensure!(self.count > 0, "no valid pixel accumulated");
        let n = self.count as f64;
        Ok(Metrics {
            epe: self.abs_sum / n,
            px1: 100.0 * self.over1 as f64 / n,
            px3: 100.0 * self.over3 as f64 / n,
            d1_all: 100.0 * self.d1 as f64 / n,
        })
    }
}
