//! Fixed benchmark layouts shared by the acceptance suite, the CLI and the
//! examples. Training and test material come from independent forks of one
//! seed, so test pulses and the test series are never seen in training.

use serde::{Deserialize, Serialize};

use super::booster::{filter_windows, gen_booster_series, make_windows, BoosterSeries, WindowedSample, DEFAULT_GATE_THRESHOLD, OUTPUT_CHANNEL};
use super::pairs::{make_pairs, sample_pairs, PulsePair};
use super::pulses::{gen_pulses, PulseClass, PulseCounts, PulseRecord};
use crate::diffcore::RngStream;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseBenchSpec {
    pub train_normal: usize,
    pub train_anomaly_a: usize,
    pub test_normal: usize,
    pub test_anomaly_a: usize,
    pub test_anomaly_b: usize,
    pub pairs_per_label: usize,
    pub test_pairs_per_group: usize,
}

impl Default for PulseBenchSpec {
    fn default() -> Self {
        Self {
            train_normal: 200,
            train_anomaly_a: 100,
            test_normal: 100,
            test_anomaly_a: 50,
            test_anomaly_b: 50,
            pairs_per_label: 500,
            test_pairs_per_group: 200,
        }
    }
}

/// Training pairs exclude class B; the test side has three groups of pairs:
/// normal–normal, normal–A and normal–B.
#[derive(Clone, Debug)]
pub struct PulseBenchmark {
    pub train_pulses: Vec<PulseRecord>,
    pub test_pulses: Vec<PulseRecord>,
    pub train_pairs: Vec<PulsePair>,
    pub test_normal: Vec<PulsePair>,
    pub test_seen: Vec<PulsePair>,
    pub test_unseen: Vec<PulsePair>,
}

impl PulseBenchmark {
    pub fn generate(spec: &PulseBenchSpec, rng: &RngStream) -> Result<Self> {
        let train_pulses = gen_pulses(
            PulseCounts { normal: spec.train_normal, anomaly_a: spec.train_anomaly_a, anomaly_b: 0 },
            &rng.fork_named("train-pulses"),
        );
        let test_pulses = gen_pulses(
            PulseCounts { normal: spec.test_normal, anomaly_a: spec.test_anomaly_a, anomaly_b: spec.test_anomaly_b },
            &rng.fork_named("test-pulses"),
        );
        Self::from_pulses(train_pulses, test_pulses, spec, rng)
    }

    /// Pairs drawn from given pulse sets exactly as [`Self::generate`] draws
    /// them; only the pair counts of `spec` are used.
    pub fn from_pulses(
        train_pulses: Vec<PulseRecord>,
        test_pulses: Vec<PulseRecord>,
        spec: &PulseBenchSpec,
        rng: &RngStream,
    ) -> Result<Self> {
        let train_pairs = make_pairs(&train_pulses, spec.pairs_per_label, true, &rng.fork_named("train-pairs"))?;
        let mut r = rng.fork_named("test-pairs");
        let n = spec.test_pairs_per_group;
        let test_normal = sample_pairs(&test_pulses, PulseClass::Normal, n, 0, &mut r)?;
        let test_seen = sample_pairs(&test_pulses, PulseClass::AnomalyA, n, n as u64, &mut r)?;
        let test_unseen = sample_pairs(&test_pulses, PulseClass::AnomalyB, n, 2 * n as u64, &mut r)?;
        Ok(Self { train_pulses, test_pulses, train_pairs, test_normal, test_seen, test_unseen })
    }

    /// All test pairs in group order (normal, seen, unseen).
    pub fn test_pairs(&self) -> Vec<PulsePair> {
        let mut out = self.test_normal.clone();
        out.extend(self.test_seen.iter().cloned());
        out.extend(self.test_unseen.iter().cloned());
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoosterBenchSpec {
    pub length: usize,
    pub ood_segments: Vec<(usize, usize)>,
    pub gate_threshold: f64,
}

impl Default for BoosterBenchSpec {
    fn default() -> Self {
        Self { length: 400, ood_segments: vec![(175, 225)], gate_threshold: DEFAULT_GATE_THRESHOLD }
    }
}

/// One series to train on (filtered windows only) and an independently
/// drawn series of the same layout to evaluate on (all windows).
#[derive(Clone, Debug)]
pub struct BoosterBenchmark {
    pub train_series: BoosterSeries,
    pub test_series: BoosterSeries,
    pub train_windows: Vec<WindowedSample>,
    pub test_windows: Vec<WindowedSample>,
}

impl BoosterBenchmark {
    pub fn generate(spec: &BoosterBenchSpec, rng: &RngStream) -> Result<Self> {
        let train_series = gen_booster_series(spec.length, &spec.ood_segments, &rng.fork_named("train-series"))?;
        let test_series = gen_booster_series(spec.length, &spec.ood_segments, &rng.fork_named("test-series"))?;
        Self::from_series(train_series, test_series, spec.gate_threshold)
    }

    pub fn from_series(train_series: BoosterSeries, test_series: BoosterSeries, gate_threshold: f64) -> Result<Self> {
        let train_windows = filter_windows(&make_windows(&train_series, OUTPUT_CHANNEL)?, gate_threshold);
        let test_windows = make_windows(&test_series, OUTPUT_CHANNEL)?;
        Ok(Self { train_series, test_series, train_windows, test_windows })
    }
}
