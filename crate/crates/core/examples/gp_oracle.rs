//! Fits the random-feature GP head to 1-D data and compares its posterior
//! with the exact GP, inside and beyond the training range.
//!
//! Usage: cargo run --release --example gp_oracle [features] [noise_var]

use dgpa::diffcore::{ParamStore, RngStream, Tensor};
use dgpa::evalkit::{exact_gp_oracle, spearman};
use dgpa::gp_head::GpHead;

fn main() -> dgpa::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let d = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2048);
    let noise: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.04);
    let ell = 1.0;

    let mut r = RngStream::new(3);
    let xs: Vec<f64> = (0..30).map(|_| r.uniform_range(-3.0, 3.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (1.5 * x).sin() + noise.sqrt() * r.normal()).collect();
    let grid: Vec<f64> = (0..41).map(|i| -5.0 + 0.25 * i as f64).collect();

    let mut store = ParamStore::new();
    let mut head = GpHead::new(&mut store, "", 1, d, ell, noise, &mut RngStream::new(4))?;
    let phi = head.rff.features(&store, &Tensor::new(vec![xs.len(), 1], xs.clone())?)?;
    head.fit_precision(Some(&phi), &vec![1.0; xs.len()])?;
    let beta = head.ridge_weights(&phi, &ys)?;
    store.set_value(head.beta, beta)?;
    let phi_q = head.rff.features(&store, &Tensor::new(vec![grid.len(), 1], grid.clone())?)?;
    let means = head.outputs(&store, &phi_q);
    // the head's covariance is in units of the noise variance
    let vars: Vec<f64> = head.variances(&phi_q)?.iter().map(|v| v * noise).collect();
    let (om, ov) = exact_gp_oracle(&xs, &ys, &grid, ell, noise)?;

    println!("{:>6}  {:>9} {:>9}  {:>8} {:>8}", "x", "rff mean", "exact", "rff std", "exact");
    for i in 0..grid.len() {
        println!("{:>6.2}  {:>9.4} {:>9.4}  {:>8.4} {:>8.4}", grid[i], means[i], om[i], vars[i].sqrt(), ov[i].sqrt());
    }
    let rmse = (means.iter().zip(&om).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / grid.len() as f64).sqrt();
    println!("D = {d}: mean RMSE {rmse:.4}, variance rank correlation {:.4}", spearman(&vars, &ov)?);
    Ok(())
}
