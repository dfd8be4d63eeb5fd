//! ROC bands from uncertainty smearing: each trial resamples every score
//! from its predictive Gaussian and the band spans the 5th to 95th
//! percentile of the resulting curves.
//!
//! Usage: cargo run --release --example roc_smearing [trials]

use dgpa::diffcore::RngStream;
use dgpa::evalkit::{roc_curve, roc_with_smearing, DEFAULT_TRIALS};

fn main() -> dgpa::Result<()> {
    let trials = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_TRIALS);
    let mut r = RngStream::new(5);
    let labels: Vec<u8> = (0..400).map(|i| u8::from(i % 4 == 0)).collect();
    let scores: Vec<f64> = labels.iter().map(|&l| 0.8 * f64::from(l) + 0.4 * r.normal()).collect();
    let base: Vec<f64> = (0..400).map(|_| 0.05 + 0.05 * r.uniform()).collect();

    let roc = roc_curve(&scores, &labels)?;
    println!("deterministic AUC {:.4} over {} thresholds", roc.auc, roc.thresholds.len());
    println!("{:>6}  {:>10}  {:>24}", "scale", "mean width", "TPR band at FPR 0.1");
    for scale in [0.0, 1.0, 3.0, 10.0] {
        let stds: Vec<f64> = base.iter().map(|s| s * scale).collect();
        let band = roc_with_smearing(&scores, &stds, &labels, trials, &RngStream::new(6))?;
        let k = band.fpr_grid.iter().position(|&f| f >= 0.1).unwrap_or(0);
        println!("{scale:>6}  {:>10.4}  [{:.3}, {:.3}] (exact {:.3})", band.mean_width(), band.tpr_low[k], band.tpr_high[k], roc.tpr_at(band.fpr_grid[k]));
    }
    Ok(())
}
