//! Command-line front end: data generation, training, evaluation, OOD
//! probing and the gradient suite, each driven by one [`RunConfig`] and one
//! seed.
//!
//! Every task writes into an explicit `--out` directory, which always
//! receives the resolved `config.toml` and a `version.txt`. Exit codes: 0 on
//! success, 1 on a contract violation or a failed gradient check, 2 on I/O,
//! parse, configuration or usage errors.

mod config;
mod suite;

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    load_pulses, load_series, save_pulses, save_series, save_windows, BoosterBenchmark, PulseBenchmark, PulsePair,
};
use crate::diffcore::{Checkpoint, RngStream};
use crate::error::{Error, Result};
use crate::evalkit::{
    class_means, mean, roc_curve, roc_with_smearing, uncertainty_ratio, EvalReport, RocCurve, SmearBand,
    UncertaintySummary,
};
use crate::siamese::{self, train_siamese, SiameseModel};
use crate::surrogate::{self, least_uncertain, mape_loss, ramp_increments, ramp_probe, smooth3, train_surrogate, SurrogateModel};

pub use config::{EvaluateConfig, GradcheckConfig, ProbeConfig, RunConfig, DEFAULT_SEED, SEED_ENV};
pub use suite::{gradient_suite, SuiteEntry};

pub const PULSES_TRAIN: &str = "pulses_train.csv";
pub const PULSES_TEST: &str = "pulses_test.csv";
pub const PAIRS_TRAIN: &str = "pairs_train.csv";
pub const PAIRS_TEST: &str = "pairs_test.csv";
pub const SERIES_TRAIN: &str = "booster_train_series.csv";
pub const SERIES_TEST: &str = "booster_test_series.csv";
pub const WINDOWS_TRAIN: &str = "booster_train_windows.csv";
pub const WINDOWS_TEST: &str = "booster_test_windows.csv";
pub const SIAMESE_CKPT: &str = "siamese.ckpt";
pub const SURROGATE_CKPT: &str = "surrogate.ckpt";

#[derive(Debug, Parser)]
#[command(name = "dgpa", version, about = "Distance-aware uncertainty with GP output layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; every key has a default
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed, overriding the configuration file and DGPA_SEED
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataArg {
    /// Directory written by gen-data; the benchmark is regenerated from the seed when omitted
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the pulse and booster benchmarks as CSV
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the twin-network pulse classifier
    TrainSiamese {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Train the next-step booster surrogate
    TrainSurrogate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Evaluate a checkpoint on its benchmark's test split
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by train-siamese or train-surrogate
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArg,
    },
    /// Ramp one surrogate input channel out of its training range
    ProbeOod {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by train-surrogate
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArg,
    },
    /// Check tape gradients of every layer and both objectives against finite differences
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Contract(_) | Error::Numerical(_) | Error::Internal(_) => 1,
        Error::Parse { .. } | Error::Config(_) | Error::Checkpoint(_) | Error::Io(_) | Error::Json(_) => 2,
    }
}

/// Parses `args` (program name first), runs the task and returns the exit
/// code. Progress goes to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Run {
    cfg: RunConfig,
    rng: RngStream,
    out: PathBuf,
}

impl Run {
    fn start(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let env = std::env::var(SEED_ENV).ok();
        cfg.resolve_seed(common.seed, env.as_deref())?;
        fs::create_dir_all(&common.out)?;
        fs::write(common.out.join("config.toml"), cfg.to_toml()?)?;
        fs::write(common.out.join("version.txt"), format!("dgpa {}\n", crate::VERSION))?;
        Ok(Self { rng: RngStream::new(cfg.seed), cfg, out: common.out.clone() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn pulses(&self, data: &DataArg) -> Result<PulseBenchmark> {
        let rng = self.rng.fork_named("data");
        match &data.data {
            Some(dir) => PulseBenchmark::from_pulses(
                load_pulses(&dir.join(PULSES_TRAIN))?,
                load_pulses(&dir.join(PULSES_TEST))?,
                &self.cfg.pulses,
                &rng,
            ),
            None => PulseBenchmark::generate(&self.cfg.pulses, &rng),
        }
    }

    fn booster(&self, data: &DataArg) -> Result<BoosterBenchmark> {
        match &data.data {
            Some(dir) => BoosterBenchmark::from_series(
                load_series(&dir.join(SERIES_TRAIN))?,
                load_series(&dir.join(SERIES_TEST))?,
                self.cfg.booster.gate_threshold,
            ),
            None => BoosterBenchmark::generate(&self.cfg.booster, &self.rng.fork_named("data")),
        }
    }

    fn config_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(&self.cfg)?)
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::GenData { common } => gen_data(&Run::start(&common)?),
        Command::TrainSiamese { common, data } => train_siamese_task(&Run::start(&common)?, &data),
        Command::TrainSurrogate { common, data } => train_surrogate_task(&Run::start(&common)?, &data),
        Command::Evaluate { common, checkpoint, data } => evaluate(&Run::start(&common)?, &checkpoint, &data),
        Command::ProbeOod { common, checkpoint, data } => probe_ood(&Run::start(&common)?, &checkpoint, &data),
        Command::Gradcheck { common } => gradcheck(&Run::start(&common)?),
    }
    .map(|()| 0)
    .or_else(|e| match e {
        Error::Numerical(ref m) if m == GRADCHECK_FAILED => Ok(1),
        other => Err(other),
    })
}

const GRADCHECK_FAILED: &str = "gradient check failed";

fn writer(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn pair_group(p: &PulsePair) -> &'static str {
    p.anomaly.map_or("normal", |c| c.as_str())
}

fn write_pairs(path: &Path, pairs: &[PulsePair]) -> Result<()> {
    let mut w = writer(path)?;
    writeln!(w, "pair_id,a_id,b_id,label,group")?;
    for p in pairs {
        writeln!(w, "{},{},{},{},{}", p.id, p.a_id, p.b_id, p.label, pair_group(p))?;
    }
    w.flush()?;
    Ok(())
}

fn write_log(path: &Path, losses: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    writeln!(w, "epoch,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(w, "{},{l:.16e}", i + 1)?;
    }
    w.flush()?;
    Ok(())
}

fn write_roc(path: &Path, roc: &RocCurve) -> Result<()> {
    let mut w = writer(path)?;
    writeln!(w, "fpr,tpr,threshold")?;
    for (k, (f, t)) in roc.fpr.iter().zip(&roc.tpr).enumerate() {
        let thr = if k == 0 { "inf".to_string() } else { format!("{:.16e}", roc.thresholds[k - 1]) };
        writeln!(w, "{f:.16e},{t:.16e},{thr}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_band(path: &Path, band: &SmearBand) -> Result<()> {
    let mut w = writer(path)?;
    writeln!(w, "fpr,tpr_low,tpr_high")?;
    for ((f, lo), hi) in band.fpr_grid.iter().zip(&band.tpr_low).zip(&band.tpr_high) {
        writeln!(w, "{f:.16e},{lo:.16e},{hi:.16e}")?;
    }
    w.flush()?;
    Ok(())
}

fn gen_data(run: &Run) -> Result<()> {
    let none = DataArg { data: None };
    let pulses = run.pulses(&none)?;
    save_pulses(&run.path(PULSES_TRAIN), &pulses.train_pulses)?;
    save_pulses(&run.path(PULSES_TEST), &pulses.test_pulses)?;
    write_pairs(&run.path(PAIRS_TRAIN), &pulses.train_pairs)?;
    write_pairs(&run.path(PAIRS_TEST), &pulses.test_pairs())?;
    let booster = run.booster(&none)?;
    save_series(&run.path(SERIES_TRAIN), &booster.train_series)?;
    save_series(&run.path(SERIES_TEST), &booster.test_series)?;
    save_windows(&run.path(WINDOWS_TRAIN), &booster.train_windows)?;
    save_windows(&run.path(WINDOWS_TEST), &booster.test_windows)?;
    println!(
        "pulses: {} train, {} test; pairs: {} train, {} test",
        pulses.train_pulses.len(),
        pulses.test_pulses.len(),
        pulses.train_pairs.len(),
        pulses.test_pairs().len()
    );
    println!(
        "booster: {} filtered training windows, {} test windows ({} OOD)",
        booster.train_windows.len(),
        booster.test_windows.len(),
        booster.test_windows.iter().filter(|w| w.ood).count()
    );
    Ok(())
}

fn train_siamese_task(run: &Run, data: &DataArg) -> Result<()> {
    let bench = run.pulses(data)?;
    let model = train_siamese(&bench.train_pairs, &run.cfg.siamese, &run.rng.fork_named("train"))?;
    model.save(&run.path(SIAMESE_CKPT))?;
    write_log(&run.path("train_log.csv"), &model.epoch_losses)?;
    let test = bench.test_pairs();
    let preds = model.predict(&test)?;
    siamese::write_predictions(&run.path("predictions.csv"), &test, &preds)?;
    if let Some(l) = model.epoch_losses.last() {
        println!("trained {} epochs, final loss {l:.5}", model.epoch_losses.len());
    }
    println!("wrote {}", run.path(SIAMESE_CKPT).display());
    Ok(())
}

fn train_surrogate_task(run: &Run, data: &DataArg) -> Result<()> {
    let bench = run.booster(data)?;
    let model = train_surrogate(&bench.train_windows, &run.cfg.surrogate, &run.rng.fork_named("train"))?;
    model.save(&run.path(SURROGATE_CKPT))?;
    write_log(&run.path("train_log.csv"), &model.epoch_losses)?;
    let preds = model.predict(&bench.test_windows)?;
    surrogate::write_predictions(&run.path("predictions.csv"), &bench.test_windows, &preds)?;
    if let Some(l) = model.epoch_losses.last() {
        println!("trained {} epochs, final objective {l:.5}", model.epoch_losses.len());
    }
    println!("wrote {}", run.path(SURROGATE_CKPT).display());
    Ok(())
}

enum Loaded {
    Siamese(Box<SiameseModel>),
    Surrogate(Box<SurrogateModel>),
}

fn load_model(path: &Path) -> Result<Loaded> {
    let ck = Checkpoint::load(path)?;
    if ck.get("scaler.target_mean").is_some() {
        Ok(Loaded::Surrogate(Box::new(SurrogateModel::from_checkpoint(&ck)?)))
    } else {
        Ok(Loaded::Siamese(Box::new(SiameseModel::from_checkpoint(&ck)?)))
    }
}

fn evaluate(run: &Run, checkpoint: &Path, data: &DataArg) -> Result<()> {
    let report = match load_model(checkpoint)? {
        Loaded::Siamese(m) => evaluate_siamese(run, &m, data)?,
        Loaded::Surrogate(m) => evaluate_surrogate(run, &m, data)?,
    };
    report.save(&run.path("report.json"))?;
    if let Some(roc) = &report.roc {
        write_roc(&run.path("roc.csv"), roc)?;
    }
    if let Some(band) = &report.band {
        write_band(&run.path("band.csv"), band)?;
    }
    for (k, v) in &report.metrics {
        println!("{k}: {v:.4}");
    }
    if let Some(r) = report.uncertainty.ratio {
        println!("uncertainty ratio: {r:.4}");
    }
    for (k, v) in &report.uncertainty.class_means {
        println!("mean std [{k}]: {v:.5}");
    }
    Ok(())
}

fn evaluate_siamese(run: &Run, model: &SiameseModel, data: &DataArg) -> Result<EvalReport> {
    let bench = run.pulses(data)?;
    let test = bench.test_pairs();
    let preds = model.predict(&test)?;
    siamese::write_predictions(&run.path("predictions.csv"), &test, &preds)?;

    let groups: Vec<&str> = test.iter().map(pair_group).collect();
    let stds: Vec<f64> = preds.iter().map(|p| p.1).collect();
    let seen = |g: &str| g == "normal" || g == "anomaly_a";
    let pick = |keep: &dyn Fn(&str) -> bool| -> (Vec<f64>, Vec<f64>, Vec<u8>) {
        let mut out = (Vec::new(), Vec::new(), Vec::new());
        for ((p, t), g) in preds.iter().zip(&test).zip(&groups) {
            if keep(g) {
                out.0.push(p.0);
                out.1.push(p.1);
                out.2.push(t.label);
            }
        }
        out
    };
    let (scores, sds, labels) = pick(&seen);
    let roc = roc_curve(&scores, &labels)?;
    let band = roc_with_smearing(&scores, &sds, &labels, run.cfg.evaluate.trials, &run.rng.fork_named("smearing"))?;
    let (u_scores, _, u_labels) = pick(&|g| g == "normal" || g == "anomaly_b");
    let anomalous: Vec<(f64, bool)> =
        stds.iter().zip(&groups).filter(|(_, g)| **g != "normal").map(|(s, g)| (*s, *g == "anomaly_b")).collect();
    let (a_stds, a_flags): (Vec<f64>, Vec<bool>) = anomalous.into_iter().unzip();

    let mut metrics = std::collections::BTreeMap::new();
    metrics.insert("auc_seen".to_string(), roc.auc);
    metrics.insert("auc_unseen".to_string(), roc_curve(&u_scores, &u_labels)?.auc);
    metrics.insert("band_mean_width".to_string(), band.mean_width());
    Ok(EvalReport {
        roc: Some(roc),
        band: Some(band),
        uncertainty: UncertaintySummary {
            ratio: Some(uncertainty_ratio(&a_stds, &a_flags)?),
            class_means: class_means(&stds, groups.iter().copied()),
        },
        metrics,
        config: run.config_json()?,
        seed: run.cfg.seed,
    })
}

fn evaluate_surrogate(run: &Run, model: &SurrogateModel, data: &DataArg) -> Result<EvalReport> {
    let bench = run.booster(data)?;
    let windows = &bench.test_windows;
    let preds = model.predict(windows)?;
    surrogate::write_predictions(&run.path("predictions.csv"), windows, &preds)?;

    let stds: Vec<f64> = preds.iter().map(|p| p.1).collect();
    let flags: Vec<bool> = windows.iter().map(|w| w.ood).collect();
    let groups = flags.iter().map(|&f| if f { "ood" } else { "in_distribution" });
    // OOD detection with the predictive std as the score
    let roc = roc_curve(&stds, &flags.iter().map(|&f| u8::from(f)).collect::<Vec<_>>())?;
    let (id_pred, id_target): (Vec<f64>, Vec<f64>) =
        windows.iter().zip(&preds).filter(|(w, _)| !w.ood).map(|(w, p)| (p.0, w.target)).unzip();
    let all_pred: Vec<f64> = preds.iter().map(|p| p.0).collect();
    let all_target: Vec<f64> = windows.iter().map(|w| w.target).collect();

    let mut metrics = std::collections::BTreeMap::new();
    metrics.insert("auc_ood_detection".to_string(), roc.auc);
    metrics.insert("mape_in_distribution".to_string(), mape_loss(&id_pred, &id_target)?);
    metrics.insert("mape_all".to_string(), mape_loss(&all_pred, &all_target)?);
    Ok(EvalReport {
        roc: Some(roc),
        band: None,
        uncertainty: UncertaintySummary {
            ratio: Some(uncertainty_ratio(&stds, &flags)?),
            class_means: class_means(&stds, groups),
        },
        metrics,
        config: run.config_json()?,
        seed: run.cfg.seed,
    })
}

fn probe_ood(run: &Run, checkpoint: &Path, data: &DataArg) -> Result<()> {
    let model = match load_model(checkpoint)? {
        Loaded::Surrogate(m) => m,
        Loaded::Siamese(_) => return Err(Error::contract("probe-ood needs a surrogate checkpoint")),
    };
    let bench = run.booster(data)?;
    let preds = model.predict(&bench.test_windows)?;
    let base = &bench.test_windows[least_uncertain(&preds)?];
    let p = &run.cfg.probe;
    let incs = ramp_increments(&model, p.channel, p.steps, p.span)?;
    let rows = ramp_probe(&model, base, p.channel, &incs)?;
    surrogate::write_probe(&run.path("probe.csv"), &rows)?;
    let smoothed = smooth3(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    let first = rows[0].2;
    let last = rows[rows.len() - 1].2;
    println!("ramp on channel {} from window {}: std {first:.5} -> {last:.5}", p.channel, base.id);
    println!("smoothed std nondecreasing: {}", smoothed.windows(2).all(|w| w[0] <= w[1]));
    println!("mean std along ramp: {:.5}", mean(&rows.iter().map(|r| r.2).collect::<Vec<_>>()));
    Ok(())
}

fn gradcheck(run: &Run) -> Result<()> {
    let g = &run.cfg.gradcheck;
    let entries = gradient_suite(g.step, g.coords)?;
    let mut w = writer(&run.path("gradcheck.csv"))?;
    writeln!(w, "check,parameter,coords,max_rel_error")?;
    let mut all = true;
    for e in &entries {
        for p in &e.report.params {
            writeln!(w, "{},{},{},{:.6e}", e.name, p.name, p.coords_checked, p.max_rel_error)?;
        }
        let ok = e.passes(g.tolerance);
        all &= ok;
        println!("{:<24} {}  max rel error {:.3e}", e.name, if ok { "pass" } else { "FAIL" }, e.report.max_rel_error());
    }
    w.flush()?;
    if all {
        println!("all {} checks pass at tolerance {:e}", entries.len(), g.tolerance);
        Ok(())
    } else {
        Err(Error::Numerical(GRADCHECK_FAILED.into()))
    }
}
