//! Frozen regression check for surrogate accuracy on a long seeded run.

use dgpa::data::{gen_booster_series, make_windows, OUTPUT_CHANNEL, WINDOW};
use dgpa::diffcore::RngStream;
use dgpa::surrogate::{mape_loss, train_surrogate, SurrogateConfig};

#[test]
fn long_run_reaches_five_percent_mape() {
    let root = RngStream::new(2024);
    let train_series = gen_booster_series(2000 + WINDOW, &[], &root.fork_named("train-series")).unwrap();
    let train = make_windows(&train_series, OUTPUT_CHANNEL).unwrap();
    assert_eq!(train.len(), 2000);
    let val_series = gen_booster_series(400 + WINDOW, &[], &root.fork_named("val-series")).unwrap();
    let val = make_windows(&val_series, OUTPUT_CHANNEL).unwrap();

    let cfg = SurrogateConfig { epochs: 30, ..SurrogateConfig::default() };
    let model = train_surrogate(&train, &cfg, &root.fork_named("train")).unwrap();
    let preds: Vec<f64> = model.predict(&val).unwrap().iter().map(|p| p.0).collect();
    let targets: Vec<f64> = val.iter().map(|w| w.target).collect();
    let mape = mape_loss(&preds, &targets).unwrap();
    println!("validation MAPE {mape:.3}%");
    assert!(mape < 5.0, "validation MAPE {mape}%");
}
