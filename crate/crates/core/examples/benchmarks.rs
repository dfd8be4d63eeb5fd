//! Generates both synthetic benchmarks, summarises them and writes the CSV
//! files the CLI reads back with `--data`.
//!
//! Usage: cargo run --release --example benchmarks [out_dir] [seed]

use std::path::PathBuf;

use dgpa::data::{
    save_pulses, save_series, save_windows, BoosterBenchSpec, BoosterBenchmark, PulseBenchSpec, PulseBenchmark, PulseClass,
    OUTPUT_CHANNEL,
};
use dgpa::diffcore::RngStream;

fn main() -> dgpa::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dgpa-benchmarks"));
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(7);
    std::fs::create_dir_all(&out)?;
    let rng = RngStream::new(seed).fork_named("data");

    let pulses = PulseBenchmark::generate(&PulseBenchSpec::default(), &rng)?;
    for class in [PulseClass::Normal, PulseClass::AnomalyA, PulseClass::AnomalyB] {
        let count = |v: &[dgpa::data::PulseRecord]| v.iter().filter(|p| p.class == class).count();
        println!("{:<10} {:>4} train  {:>4} test pulses", class.as_str(), count(&pulses.train_pulses), count(&pulses.test_pulses));
    }
    println!(
        "pairs: {} train, test {} normal / {} seen / {} unseen",
        pulses.train_pairs.len(),
        pulses.test_normal.len(),
        pulses.test_seen.len(),
        pulses.test_unseen.len()
    );
    save_pulses(&out.join("pulses_train.csv"), &pulses.train_pulses)?;
    save_pulses(&out.join("pulses_test.csv"), &pulses.test_pulses)?;

    let spec = BoosterBenchSpec::default();
    let booster = BoosterBenchmark::generate(&spec, &rng)?;
    let series = &booster.test_series;
    let y = series.channel(OUTPUT_CHANNEL);
    let range = |keep: bool| {
        let v: Vec<f64> = y.iter().zip(&series.ood_mask).filter(|(_, &m)| m == keep).map(|(v, _)| *v).collect();
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
    };
    println!("booster series length {}, OOD segments {:?}", series.len(), spec.ood_segments);
    println!("output channel peak-to-peak: {:.3} in distribution, {:.3} inside OOD", range(false), range(true));
    println!(
        "windows: {} train after gate filtering, {} test ({} OOD)",
        booster.train_windows.len(),
        booster.test_windows.len(),
        booster.test_windows.iter().filter(|w| w.ood).count()
    );
    save_series(&out.join("booster_train_series.csv"), &booster.train_series)?;
    save_series(&out.join("booster_test_series.csv"), &booster.test_series)?;
    save_windows(&out.join("booster_train_windows.csv"), &booster.train_windows)?;
    save_windows(&out.join("booster_test_windows.csv"), &booster.test_windows)?;
    println!("wrote CSV files to {}", out.display());
    Ok(())
}
