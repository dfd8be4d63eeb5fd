use std::f64::consts::PI;

use crate::diffcore::{RngStream, Tensor};
use crate::error::{ensure, Result};

pub const CHANNELS: usize = 5;
pub const WINDOW: usize = 15;
/// Channel predicted by the surrogate and perturbed inside OOD segments.
pub const OUTPUT_CHANNEL: usize = 1;
pub const DEFAULT_GATE_THRESHOLD: f64 = 0.995;

const LEVELS: [f64; CHANNELS] = [2.0, 1.0, 0.5, 1.5, 3.0];
const DRIFT_SCALE: [f64; CHANNELS] = [0.10, 0.05, 0.03, 0.08, 0.12];
const NOISE: [f64; CHANNELS] = [0.002, 0.001, 0.001, 0.002, 0.003];
/// Loadings of each channel on the two latent drifts.
const MIXING: [[f64; 2]; CHANNELS] = [[1.0, 0.2], [0.7, 0.7], [-0.4, 1.0], [0.9, -0.5], [0.3, 0.8]];

#[derive(Clone, Debug, PartialEq)]
pub struct BoosterSeries {
    /// `[5, T]`.
    pub channels: Tensor,
    /// Gate in `[0.9, 1.0]`; above 0.995 exactly where `ood_mask` is set.
    pub gate: Vec<f64>,
    pub ood_mask: Vec<bool>,
}

impl BoosterSeries {
    pub fn len(&self) -> usize {
        self.gate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gate.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.channels.row(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSample {
    pub id: u64,
    /// `[5, 15]`.
    pub inputs: Tensor,
    pub target: f64,
    pub gate: f64,
    /// Generator ground truth; never shown to a model.
    pub ood: bool,
}

/// Smooth latent drift: a sum of three slow sinusoids scaled to roughly unit amplitude.
fn latent(t_len: usize, rng: &mut RngStream) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.uniform_range(60.0, 200.0), rng.uniform_range(0.0, 2.0 * PI), rng.uniform_range(0.3, 1.0)))
        .collect();
    let total: f64 = comps.iter().map(|c| c.2).sum();
    (0..t_len)
        .map(|t| comps.iter().map(|&(p, ph, a)| a * (2.0 * PI * t as f64 / p + ph).sin()).sum::<f64>() / total)
        .collect()
}

/// Generates a `[5, length]` series. Inside each `(start, end)` segment
/// (end exclusive) the output channel gets an added cycle with period in
/// [4, 8] steps and amplitude twice the in-distribution peak-to-peak range,
/// and the gate sits in (0.995, 1.0].
pub fn gen_booster_series(length: usize, segments: &[(usize, usize)], rng: &RngStream) -> Result<BoosterSeries> {
    ensure!(length > 0, "series length must be positive");
    let mut sorted = segments.to_vec();
    sorted.sort_unstable();
    for (i, &(s, e)) in sorted.iter().enumerate() {
        ensure!(s < e && e <= length, "OOD segment ({s}, {e}) must lie within [0, {length})");
        if i > 0 {
            ensure!(sorted[i - 1].1 <= s, "OOD segments {:?} and {:?} overlap", sorted[i - 1], (s, e));
        }
    }

    let mut drift_rng = rng.fork_named("drift");
    let z = [latent(length, &mut drift_rng), latent(length, &mut drift_rng)];
    let zg = latent(length, &mut drift_rng);
    let mut noise_rng = rng.fork_named("noise");

    let mut data = vec![0.0; CHANNELS * length];
    for c in 0..CHANNELS {
        for t in 0..length {
            let drift = MIXING[c][0] * z[0][t] + MIXING[c][1] * z[1][t];
            data[c * length + t] = LEVELS[c] + DRIFT_SCALE[c] * drift + NOISE[c] * noise_rng.normal();
        }
    }

    let mut mask = vec![false; length];
    for &(s, e) in &sorted {
        mask[s..e].iter_mut().for_each(|m| *m = true);
    }

    let out = &data[OUTPUT_CHANNEL * length..(OUTPUT_CHANNEL + 1) * length];
    let id_vals = out.iter().zip(&mask).filter(|(_, &m)| !m).map(|(v, _)| *v);
    let (lo, hi) = id_vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let id_range = if lo.is_finite() { hi - lo } else { 2.0 * DRIFT_SCALE[OUTPUT_CHANNEL] };

    let mut cycle_rng = rng.fork_named("cycle");
    for &(s, e) in &sorted {
        let period = cycle_rng.uniform_range(4.0, 8.0);
        let phase = cycle_rng.uniform_range(0.0, 2.0 * PI);
        let amp = 2.0 * id_range;
        for t in s..e {
            data[OUTPUT_CHANNEL * length + t] += amp * (2.0 * PI * (t - s) as f64 / period + phase).sin();
        }
    }

    let mut gate_rng = rng.fork_named("gate");
    let gate = (0..length)
        .map(|t| {
            if mask[t] {
                0.9955 + 0.0045 * gate_rng.uniform()
            } else {
                (0.955 + 0.03 * zg[t] + 0.002 * gate_rng.normal()).clamp(0.9, 0.99)
            }
        })
        .collect();

    Ok(BoosterSeries { channels: Tensor::new(vec![CHANNELS, length], data)?, gate, ood_mask: mask })
}

/// Stride-1 windows of 15 steps over all channels; the target is the output
/// channel one step after the window, gate and OOD flag are read at the
/// target step. Yields `T - 15` windows.
pub fn make_windows(series: &BoosterSeries, output_channel: usize) -> Result<Vec<WindowedSample>> {
    let t_len = series.len();
    ensure!(t_len > WINDOW, "series of length {t_len} is too short for a {WINDOW}-step window plus target");
    let channels = series.channels.dim(0);
    ensure!(output_channel < channels, "output channel {output_channel} out of range");
    let mut out = Vec::with_capacity(t_len - WINDOW);
    for k in 0..t_len - WINDOW {
        let mut inputs = Vec::with_capacity(channels * WINDOW);
        for c in 0..channels {
            inputs.extend_from_slice(&series.channel(c)[k..k + WINDOW]);
        }
        let target_t = k + WINDOW;
        out.push(WindowedSample {
            id: k as u64,
            inputs: Tensor::new(vec![channels, WINDOW], inputs)?,
            target: series.channel(output_channel)[target_t],
            gate: series.gate[target_t],
            ood: series.ood_mask[target_t],
        });
    }
    Ok(out)
}

/// Keeps windows whose gate does not exceed `threshold`, preserving order.
pub fn filter_windows(windows: &[WindowedSample], threshold: f64) -> Vec<WindowedSample> {
    windows.iter().filter(|w| w.gate <= threshold).cloned().collect()
}
