//! Trains the twin-network classifier on normal and droop pulses, then
//! compares predictive uncertainty on normal pairs, seen-anomaly pairs and
//! pairs with the never-seen oscillation anomaly.
//!
//! Usage: cargo run --release --example siamese_pulses [seed] [epochs]

use std::time::Instant;

use dgpa::data::{PulseBenchSpec, PulseBenchmark};
use dgpa::diffcore::RngStream;
use dgpa::evalkit::{mean, roc_curve};
use dgpa::layers::power_iteration_norm;
use dgpa::siamese::{train_siamese, SiameseConfig};

fn main() -> dgpa::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let config = SiameseConfig { epochs, ..SiameseConfig::default() };

    let rng = RngStream::new(seed);
    let bench = PulseBenchmark::generate(&PulseBenchSpec::default(), &rng.fork_named("data"))?;
    println!("{} training pairs", bench.train_pairs.len());

    let start = Instant::now();
    let model = train_siamese(&bench.train_pairs, &config, &rng.fork_named("train"))?;
    println!("trained in {:.1?}", start.elapsed());
    for (i, l) in model.epoch_losses.iter().enumerate() {
        println!("epoch {:>2}  loss {l:.5}", i + 1);
    }

    let worst = model
        .net
        .constrained_weights()
        .into_iter()
        .map(|id| power_iteration_norm(model.store.value(id), 100, 1))
        .fold(0.0, f64::max);
    println!("largest constrained spectral norm {worst:.5}");

    let groups = [("normal-normal", &bench.test_normal), ("normal-seen", &bench.test_seen), ("normal-unseen", &bench.test_unseen)];
    let mut seen_scores = Vec::new();
    for (name, pairs) in groups {
        let preds = model.predict(pairs)?;
        let probs: Vec<f64> = preds.iter().map(|p| p.0).collect();
        let stds: Vec<f64> = preds.iter().map(|p| p.1).collect();
        println!("{name:<14} mean p {:.3}  mean std {:.5}", mean(&probs), mean(&stds));
        if name != "normal-unseen" {
            seen_scores.extend(preds.iter().map(|p| (p.0, u8::from(name == "normal-seen"))));
        }
    }
    let (scores, labels): (Vec<f64>, Vec<u8>) = seen_scores.into_iter().unzip();
    println!("seen-anomaly AUC {:.4}", roc_curve(&scores, &labels)?.auc);
    Ok(())
}
