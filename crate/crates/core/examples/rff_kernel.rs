//! How well random Fourier features reproduce the RBF kernel as the feature
//! count grows.
//!
//! Usage: cargo run --release --example rff_kernel [length_scale]

use dgpa::diffcore::{ParamStore, RngStream, Tensor};
use dgpa::gp_head::RffMap;

fn main() -> dgpa::Result<()> {
    let ell: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let dim = 4;
    let n = 200;
    let mut r = RngStream::new(1);
    let xs: Vec<f64> = (0..n * dim).map(|_| 0.6 * r.normal()).collect();
    let ys: Vec<f64> = (0..n * dim).map(|_| 0.6 * r.normal()).collect();
    let exact: Vec<f64> = (0..n)
        .map(|i| {
            let d2: f64 = (0..dim).map(|k| (xs[i * dim + k] - ys[i * dim + k]).powi(2)).sum();
            (-d2 / (2.0 * ell * ell)).exp()
        })
        .collect();
    let x = Tensor::new(vec![n, dim], xs)?;
    let y = Tensor::new(vec![n, dim], ys)?;

    println!("{:>6}  {:>10}  {:>10}  {:>12}", "D", "kernel MAE", "max error", "|1 - φ·φ|");
    for d in [16, 64, 256, 1024, 4096] {
        let mut store = ParamStore::new();
        let map = RffMap::new(&mut store, "", dim, d, ell, &mut RngStream::new(d as u64))?;
        let fx = map.features(&store, &x)?;
        let fy = map.features(&store, &y)?;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let errs: Vec<f64> = (0..n).map(|i| (dot(fx.row(i), fy.row(i)) - exact[i]).abs()).collect();
        let self_err = (0..n).map(|i| (1.0 - dot(fx.row(i), fx.row(i))).abs()).sum::<f64>() / n as f64;
        println!(
            "{d:>6}  {:>10.4}  {:>10.4}  {self_err:>12.4}",
            errs.iter().sum::<f64>() / n as f64,
            errs.iter().copied().fold(0.0, f64::max)
        );
    }
    Ok(())
}
