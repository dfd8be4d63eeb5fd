//! Trains the next-step surrogate on the in-distribution part of a booster
//! series, then compares predictive uncertainty inside and outside the
//! cyclic high-amplitude segment of a fresh series and ramps the output
//! channel out of its training range.
//!
//! Usage: cargo run --release --example surrogate_booster [seed] [epochs]

use std::time::Instant;

use dgpa::data::{BoosterBenchSpec, BoosterBenchmark, OUTPUT_CHANNEL};
use dgpa::diffcore::RngStream;
use dgpa::evalkit::uncertainty_ratio;
use dgpa::surrogate::{
    least_uncertain, mape_loss, ramp_increments, ramp_probe, smooth3, train_surrogate, SurrogateConfig, RAMP_SPAN,
    RAMP_STEPS,
};

fn main() -> dgpa::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let config = SurrogateConfig { epochs, ..SurrogateConfig::default() };

    let rng = RngStream::new(seed);
    let bench = BoosterBenchmark::generate(&BoosterBenchSpec::default(), &rng.fork_named("data"))?;
    println!("{} training windows, {} test windows", bench.train_windows.len(), bench.test_windows.len());

    let start = Instant::now();
    let model = train_surrogate(&bench.train_windows, &config, &rng.fork_named("train"))?;
    println!("trained in {:.1?}", start.elapsed());
    for (i, l) in model.epoch_losses.iter().enumerate() {
        println!("epoch {:>2}  objective {l:.4}", i + 1);
    }

    let preds = model.predict(&bench.test_windows)?;
    let flags: Vec<bool> = bench.test_windows.iter().map(|w| w.ood).collect();
    let stds: Vec<f64> = preds.iter().map(|p| p.1).collect();
    let (id_pred, id_target): (Vec<f64>, Vec<f64>) =
        bench.test_windows.iter().zip(&preds).filter(|(w, _)| !w.ood).map(|(w, p)| (p.0, w.target)).unzip();
    println!("in-distribution test MAPE {:.3}%", mape_loss(&id_pred, &id_target)?);
    println!("uncertainty ratio (ood / in-distribution) {:.3}", uncertainty_ratio(&stds, &flags)?);

    let base = &bench.test_windows[least_uncertain(&preds)?];
    let incs = ramp_increments(&model, OUTPUT_CHANNEL, RAMP_STEPS, RAMP_SPAN)?;
    let rows = ramp_probe(&model, base, OUTPUT_CHANNEL, &incs)?;
    let smoothed = smooth3(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    println!("ramp from window {}", base.id);
    for ((inc, mean, std), s) in rows.iter().zip(&smoothed) {
        println!("  +{inc:.4}  mean {mean:.4}  std {std:.5}  smoothed {s:.5}");
    }
    let monotone = smoothed.windows(2).all(|w| w[0] <= w[1]);
    println!("smoothed std nondecreasing: {monotone}, final/initial {:.2}", rows[rows.len() - 1].2 / rows[0].2);
    Ok(())
}
