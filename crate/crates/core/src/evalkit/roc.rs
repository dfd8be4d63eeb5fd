use serde::{Deserialize, Serialize};

use crate::diffcore::RngStream;
use crate::error::{ensure, Result};

pub const DEFAULT_TRIALS: usize = 250;
pub const GRID_POINTS: usize = 512;

/// ROC curve. `fpr[0] = tpr[0] = 0`; point `k + 1` is reached by lowering
/// the threshold to `thresholds[k]` (descending), so the last point is (1, 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmearBand {
    pub fpr_grid: Vec<f64>,
    pub tpr_low: Vec<f64>,
    pub tpr_high: Vec<f64>,
    pub trials: usize,
}

impl SmearBand {
    pub fn mean_width(&self) -> f64 {
        let n = self.fpr_grid.len() as f64;
        self.tpr_high.iter().zip(&self.tpr_low).map(|(h, l)| h - l).sum::<f64>() / n
    }
}

/// Scores are "higher means more positive". Equal scores share one
/// threshold step, which yields a diagonal segment on the curve.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    ensure!(scores.len() == labels.len(), "{} scores but {} labels", scores.len(), labels.len());
    ensure!(scores.iter().all(|s| !s.is_nan()), "scores contain NaN");
    ensure!(labels.iter().all(|&l| l <= 1), "labels must be 0 or 1");
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    ensure!(pos > 0 && neg > 0, "ROC needs both labels (positives {pos}, negatives {neg})");

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut fpr, mut tpr, mut thresholds) = (vec![0.0], vec![0.0], Vec::new());
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(s);
        fpr.push(fp as f64 / neg as f64);
        tpr.push(tp as f64 / pos as f64);
    }
    let auc = fpr.windows(2).zip(tpr.windows(2)).map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) / 2.0).sum();
    Ok(RocCurve { thresholds, fpr, tpr, auc })
}

impl RocCurve {
    /// TPR at a given FPR by linear interpolation; on a vertical segment the
    /// highest TPR is used.
    pub fn tpr_at(&self, x: f64) -> f64 {
        let k = self.fpr.partition_point(|&f| f <= x).saturating_sub(1);
        if self.fpr[k] == x || k + 1 == self.fpr.len() {
            return self.tpr[k];
        }
        let (f0, f1, t0, t1) = (self.fpr[k], self.fpr[k + 1], self.tpr[k], self.tpr[k + 1]);
        t0 + (t1 - t0) * (x - f0) / (f1 - f0)
    }

    pub fn on_grid(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&x| self.tpr_at(x)).collect()
    }
}

pub fn fpr_grid(points: usize) -> Vec<f64> {
    (0..points).map(|i| i as f64 / (points - 1) as f64).collect()
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Each trial resamples every score from N(mean, std), builds the ROC and
/// reads it on a 512-point FPR grid; the band is the pointwise 5th and
/// 95th percentile over trials. Trial `k` draws from its own forked stream.
pub fn roc_with_smearing(
    means: &[f64],
    stds: &[f64],
    labels: &[u8],
    trials: usize,
    rng: &RngStream,
) -> Result<SmearBand> {
    ensure!(means.len() == stds.len(), "{} means but {} stds", means.len(), stds.len());
    ensure!(trials >= 1, "at least one smearing trial is required");
    ensure!(stds.iter().all(|&s| s >= 0.0), "standard deviations must be nonnegative");
    let grid = fpr_grid(GRID_POINTS);
    let mut curves = Vec::with_capacity(trials);
    let mut sample = vec![0.0; means.len()];
    for k in 0..trials {
        let mut r = rng.fork(k as u64);
        for ((s, &m), &sd) in sample.iter_mut().zip(means).zip(stds) {
            *s = m + sd * r.normal();
        }
        curves.push(roc_curve(&sample, labels)?.on_grid(&grid));
    }
    let mut low = Vec::with_capacity(GRID_POINTS);
    let mut high = Vec::with_capacity(GRID_POINTS);
    let mut column = vec![0.0; trials];
    for g in 0..GRID_POINTS {
        for (c, curve) in column.iter_mut().zip(&curves) {
            *c = curve[g];
        }
        column.sort_by(f64::total_cmp);
        low.push(percentile(&column, 5.0));
        high.push(percentile(&column, 95.0));
    }
    Ok(SmearBand { fpr_grid: grid, tpr_low: low, tpr_high: high, trials })
}
