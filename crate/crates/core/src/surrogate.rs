//! Next-step regression surrogate with distance-aware uncertainty.
//!
//! Inputs are windows of 5 channels × 15 steps, standardised per channel
//! with training statistics; the target is standardised too. A convolutional
//! trunk ending in a 256-unit tanh layer feeds a regression GP head. The
//! training objective is MAPE on the de-standardised prediction plus a
//! two-sided squared-hinge bi-Lipschitz penalty
//!
//! ```text
//! max(0, L1·d_x − d_h)² + max(0, d_h − L2·d_x)²
//! ```
//!
//! averaged over sampled pairs in each batch, which keeps distances in the
//! last hidden layer within `[L1, L2]` times the input distances.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{WindowedSample, CHANNELS, WINDOW};
use crate::diffcore::{adam_step, AdamConfig, Checkpoint, ParamStore, RngStream, Tape, Tensor, Var};
use crate::error::{ensure, Error, Result};
use crate::gp_head::{GpHead, Task};
use crate::layers::{build_encoder, Encoder, EncoderSpec, Mode};

pub const MAPE_EPS: f64 = 1e-6;
/// Default ramp: 20 steps out to 10 training standard deviations.
pub const RAMP_STEPS: usize = 20;
pub const RAMP_SPAN: f64 = 10.0;

/// `100 · mean |t − p| / max(|t|, ε)`.
pub fn mape_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    ensure!(predictions.len() == targets.len(), "{} predictions but {} targets", predictions.len(), targets.len());
    ensure!(!targets.is_empty(), "MAPE of an empty set");
    let total: f64 = predictions.iter().zip(targets).map(|(p, t)| (t - p).abs() / t.abs().max(MAPE_EPS)).sum();
    Ok(100.0 * total / targets.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzParams {
    pub l1: f64,
    pub l2: f64,
    #[serde(rename = "lambda")]
    pub weight: f64,
    pub pairs_per_batch: usize,
}

impl Default for LipschitzParams {
    fn default() -> Self {
        Self { l1: 0.75, l2: 1.25, weight: 0.1, pairs_per_batch: 32 }
    }
}

impl LipschitzParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.l1 > 0.0 && self.l1 <= self.l2, "need 0 < l1 <= l2, got l1 = {}, l2 = {}", self.l1, self.l2);
        ensure!(self.weight >= 0.0, "penalty weight must be nonnegative");
        ensure!(self.pairs_per_batch >= 1, "pairs per batch must be positive");
        Ok(())
    }

    fn pair_term(&self, dx: f64, dh: f64) -> f64 {
        let low = (self.l1 * dx - dh).max(0.0);
        let high = (dh - self.l2 * dx).max(0.0);
        low * low + high * high
    }
}

/// Up to `cap` distinct unordered index pairs from `0..batch`; all of them
/// when there are no more than `cap`.
pub fn sample_index_pairs(batch: usize, cap: usize, rng: &mut RngStream) -> Vec<(usize, usize)> {
    let total = batch * batch.saturating_sub(1) / 2;
    let unrank = |mut k: usize| {
        let mut i = 0;
        while k >= batch - 1 - i {
            k -= batch - 1 - i;
            i += 1;
        }
        (i, i + 1 + k)
    };
    if total <= cap {
        return (0..total).map(unrank).collect();
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(cap);
    while out.len() < cap {
        let k = rng.below(total);
        if seen.insert(k) {
            out.push(unrank(k));
        }
    }
    out
}

fn row_distance(t: &Tensor, i: usize, j: usize) -> f64 {
    t.row(i).iter().zip(t.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Mean pair term over a seeded sample of distinct pairs of rows of
/// `inputs: [B, n]` and `hiddens: [B, m]`.
pub fn bilipschitz_penalty(inputs: &Tensor, hiddens: &Tensor, params: &LipschitzParams, rng: &mut RngStream) -> Result<f64> {
    ensure!(inputs.rank() == 2 && hiddens.rank() == 2, "inputs and hiddens must be [batch, width]");
    let b = inputs.dim(0);
    ensure!(hiddens.dim(0) == b, "batch sizes differ: {b} inputs, {} hiddens", hiddens.dim(0));
    ensure!(b >= 2, "bi-Lipschitz penalty needs a batch of at least 2");
    let pairs = sample_index_pairs(b, params.pairs_per_batch, rng);
    let total: f64 =
        pairs.iter().map(|&(i, j)| params.pair_term(row_distance(inputs, i, j), row_distance(hiddens, i, j))).sum();
    Ok(total / pairs.len() as f64)
}

/// Tape version over fixed `pairs`; `inputs` are constants.
pub fn bilipschitz_term(
    tape: &mut Tape,
    inputs: &Tensor,
    hiddens: Var,
    pairs: &[(usize, usize)],
    params: &LipschitzParams,
) -> Result<Var> {
    ensure!(!pairs.is_empty(), "no pairs for the bi-Lipschitz penalty");
    let (is, js): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let dx: Vec<f64> = pairs.iter().map(|&(i, j)| row_distance(inputs, i, j)).collect();
    let p = pairs.len();
    let hi = tape.gather_rows(hiddens, &is)?;
    let hj = tape.gather_rows(hiddens, &js)?;
    let diff = tape.sub(hi, hj)?;
    let sq = tape.square(diff);
    let sq = tape.sum_rows(sq);
    let dh = tape.sqrt(sq);
    let lower_x = tape.constant(Tensor::new(vec![p], dx.iter().map(|d| params.l1 * d).collect())?);
    let upper_x = tape.constant(Tensor::new(vec![p], dx.iter().map(|d| params.l2 * d).collect())?);
    let low = tape.sub(lower_x, dh)?;
    let low = tape.relu(low);
    let low = tape.square(low);
    let high = tape.sub(dh, upper_x)?;
    let high = tape.relu(high);
    let high = tape.square(high);
    let total = tape.add(low, high)?;
    Ok(tape.mean(total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Filters in each of the three convolutions.
    pub conv_features: usize,
    /// Width of the last hidden layer.
    pub hidden: usize,
    /// Random Fourier features `D`.
    pub features: usize,
    pub length_scale: f64,
    pub ridge: f64,
    pub lipschitz: LipschitzParams,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 3e-4,
            conv_features: 256,
            hidden: 256,
            features: crate::gp_head::DEFAULT_FEATURES,
            length_scale: 8.0,
            ridge: 0.01,
            lipschitz: LipschitzParams::default(),
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        self.lipschitz.validate()?;
        ensure!(self.batch_size >= 2, "batch size must be at least 2");
        ensure!(self.lr > 0.0, "learning rate must be positive");
        ensure!(self.conv_features > 0 && self.hidden > 0 && self.features > 0, "layer widths must be positive");
        ensure!(self.length_scale > 0.0, "length scale must be positive");
        ensure!(self.ridge > 0.0, "ridge must be positive");
        Ok(())
    }
}

/// Per-channel input and target standardisation from training windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    // constant channels pass through unscaled
    (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
}

impl Standardizer {
    pub fn fit(windows: &[WindowedSample]) -> Result<Self> {
        ensure!(!windows.is_empty(), "cannot standardise an empty window set");
        let channels = windows[0].inputs.dim(0);
        let (mut cm, mut cs) = (Vec::new(), Vec::new());
        for c in 0..channels {
            let (m, s) = mean_std(windows.iter().flat_map(move |w| w.inputs.row(c).iter().copied()));
            cm.push(m);
            cs.push(s);
        }
        let (tm, ts) = mean_std(windows.iter().map(|w| w.target));
        Ok(Self { channel_mean: cm, channel_std: cs, target_mean: tm, target_std: ts })
    }

    /// Standardised inputs as `[n, channels, steps]`.
    pub fn inputs(&self, windows: &[&WindowedSample]) -> Result<Tensor> {
        let channels = self.channel_mean.len();
        let mut data = Vec::with_capacity(windows.len() * channels * WINDOW);
        for w in windows {
            ensure!(w.inputs.shape() == [channels, WINDOW], "window {} has shape {:?}", w.id, w.inputs.shape());
            for c in 0..channels {
                let (m, s) = (self.channel_mean[c], self.channel_std[c]);
                data.extend(w.inputs.row(c).iter().map(|v| (v - m) / s));
            }
        }
        Tensor::new(vec![windows.len(), channels, WINDOW], data)
    }
}

#[derive(Clone, Debug)]
pub struct SurrogateNet {
    pub trunk: Encoder,
    pub head: GpHead,
}

impl SurrogateNet {
    /// `(head output [B, 1], last hidden layer [B, hidden])` for standardised inputs.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        x: &Tensor,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Var, Var)> {
        let xv = tape.constant(x.clone());
        let h = self.trunk.forward(tape, store, xv, mode, rng)?;
        let (out, _) = self.head.forward(tape, store, h)?;
        Ok((out, h))
    }

    /// MAPE of the de-standardised prediction plus the weighted bi-Lipschitz
    /// penalty over `pairs` (skipped when the weight is zero or no pairs).
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        x: &Tensor,
        targets: &[f64],
        scaler: &Standardizer,
        lipschitz: &LipschitzParams,
        pairs: &[(usize, usize)],
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Var> {
        let b = targets.len();
        ensure!(x.dim(0) == b, "{} windows but {b} targets", x.dim(0));
        let (out, h) = self.forward(tape, store, x, mode, rng)?;
        let pred = tape.scale(out, scaler.target_std);
        let pred = tape.add_scalar(pred, scaler.target_mean);
        let t = tape.constant(Tensor::new(vec![b, 1], targets.to_vec())?);
        let err = tape.sub(pred, t)?;
        let err = tape.abs(err);
        let w = tape.constant(Tensor::new(vec![b, 1], targets.iter().map(|t| 100.0 / t.abs().max(MAPE_EPS)).collect())?);
        let rel = tape.mul(w, err)?;
        let mape = tape.mean(rel);
        if lipschitz.weight == 0.0 || pairs.is_empty() {
            return Ok(mape);
        }
        let flat = x.clone().reshape(&[b, x.len() / b])?;
        let pen = bilipschitz_term(tape, &flat, h, pairs, lipschitz)?;
        let pen = tape.scale(pen, lipschitz.weight);
        tape.add(mape, pen)
    }
}

#[derive(Clone, Debug)]
pub struct SurrogateModel {
    pub config: SurrogateConfig,
    pub store: ParamStore,
    pub net: SurrogateNet,
    pub scaler: Standardizer,
    /// Mean training objective per epoch.
    pub epoch_losses: Vec<f64>,
}

impl SurrogateModel {
    pub fn new(config: &SurrogateConfig, scaler: Standardizer, rng: &RngStream) -> Result<Self> {
        config.validate()?;
        let mut init = rng.fork_named("init");
        let mut store = ParamStore::new();
        let spec = EncoderSpec::surrogate(scaler.channel_mean.len(), WINDOW, config.conv_features, config.hidden);
        let trunk = build_encoder(&spec, &mut store, "trunk.", &mut init)?;
        ensure!(trunk.output_width() == config.hidden, "trunk width {} differs from hidden {}", trunk.output_width(), config.hidden);
        let head = GpHead::new(&mut store, "head.", config.hidden, config.features, config.length_scale, config.ridge, &mut init)?;
        Ok(Self { config: config.clone(), store, net: SurrogateNet { trunk, head }, scaler, epoch_losses: Vec::new() })
    }

    /// Head outputs and last-hidden-layer values in inference mode.
    fn infer(&self, windows: &[&WindowedSample]) -> Result<(Vec<f64>, Tensor)> {
        let mut net = self.net.clone();
        let mut rng = RngStream::new(0);
        let width = self.config.hidden;
        let mut outs = Vec::with_capacity(windows.len());
        let mut hs = Vec::with_capacity(windows.len() * width);
        for chunk in windows.chunks(256) {
            let x = self.scaler.inputs(chunk)?;
            let mut tape = Tape::new();
            let (out, h) = net.forward(&mut tape, &self.store, &x, Mode::Infer, &mut rng)?;
            outs.extend_from_slice(tape.value(out).data());
            hs.extend_from_slice(tape.value(h).data());
        }
        Ok((outs, Tensor::new(vec![windows.len(), width], hs)?))
    }

    /// Last-hidden-layer values `[n, hidden]` in inference mode.
    pub fn embed(&self, windows: &[WindowedSample]) -> Result<Tensor> {
        Ok(self.infer(&windows.iter().collect::<Vec<_>>())?.1)
    }

    /// Regression precision fit (weights 1) over the training windows.
    pub fn fit_head(&mut self, windows: &[WindowedSample]) -> Result<()> {
        let refs: Vec<&WindowedSample> = windows.iter().collect();
        let (_, h) = self.infer(&refs)?;
        let phi = self.net.head.rff.features(&self.store, &h)?;
        self.net.head.fit_precision(Some(&phi), &vec![1.0; windows.len()])
    }

    /// `(mean, std)` in target units for each window.
    pub fn predict(&self, windows: &[WindowedSample]) -> Result<Vec<(f64, f64)>> {
        self.predict_refs(&windows.iter().collect::<Vec<_>>())
    }

    fn predict_refs(&self, windows: &[&WindowedSample]) -> Result<Vec<(f64, f64)>> {
        ensure!(self.net.head.is_fitted(), "GP head precision has not been fitted");
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let (_, h) = self.infer(windows)?;
        let preds = self.net.head.predict(&self.store, &h, Task::Regression)?;
        let (m, s) = (self.scaler.target_mean, self.scaler.target_std);
        Ok(preds.into_iter().map(|p| (p.mean * s + m, p.std * s)).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let c = &self.config;
        ck.push_scalar("meta.conv_features", c.conv_features as f64);
        ck.push_scalar("meta.hidden", c.hidden as f64);
        ck.push_scalar("meta.features", c.features as f64);
        ck.push_scalar("meta.l1", c.lipschitz.l1);
        ck.push_scalar("meta.l2", c.lipschitz.l2);
        ck.push_scalar("meta.lambda", c.lipschitz.weight);
        ck.push("scaler.channel_mean", Tensor::from_vec(self.scaler.channel_mean.clone()));
        ck.push("scaler.channel_std", Tensor::from_vec(self.scaler.channel_std.clone()));
        ck.push_scalar("scaler.target_mean", self.scaler.target_mean);
        ck.push_scalar("scaler.target_std", self.scaler.target_std);
        ck.push_params("param.", &self.store);
        self.net.trunk.save_buffers(&mut ck, "buf.");
        self.net.head.save(&mut ck, "gp.");
        ck.push("train.epoch_losses", Tensor::from_vec(self.epoch_losses.clone()));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let count = |name: &str| -> Result<usize> {
            let v = ck.scalar(name)?;
            if v < 1.0 || v.fract() != 0.0 {
                return Err(Error::Checkpoint(format!("`{name}` must be a positive integer, got {v}")));
            }
            Ok(v as usize)
        };
        let config = SurrogateConfig {
            conv_features: count("meta.conv_features")?,
            hidden: count("meta.hidden")?,
            features: count("meta.features")?,
            lipschitz: LipschitzParams {
                l1: ck.scalar("meta.l1")?,
                l2: ck.scalar("meta.l2")?,
                weight: ck.scalar("meta.lambda")?,
                ..LipschitzParams::default()
            },
            ..SurrogateConfig::default()
        };
        let scaler = Standardizer {
            channel_mean: ck.require("scaler.channel_mean")?.data().to_vec(),
            channel_std: ck.require("scaler.channel_std")?.data().to_vec(),
            target_mean: ck.scalar("scaler.target_mean")?,
            target_std: ck.scalar("scaler.target_std")?,
        };
        let mut model = Self::new(&config, scaler, &RngStream::new(0))?;
        ck.restore_params("param.", &mut model.store)?;
        model.net.trunk.restore_buffers(ck, "buf.")?;
        model.net.head.restore(ck, "gp.")?;
        model.config.length_scale = model.net.head.rff.length_scale;
        model.config.ridge = model.net.head.ridge;
        model.epoch_losses = ck.get("train.epoch_losses").map(|t| t.data().to_vec()).unwrap_or_default();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Mini-batch Adam on MAPE + λ·penalty, then a regression fit of the head
/// precision over the training windows.
pub fn train_surrogate(dataset: &[WindowedSample], config: &SurrogateConfig, rng: &RngStream) -> Result<SurrogateModel> {
    ensure!(!dataset.is_empty(), "cannot train the surrogate on an empty dataset");
    ensure!(dataset.len() >= 2, "need at least two windows for batch statistics");
    ensure!(
        dataset.iter().all(|w| w.inputs.shape() == [CHANNELS, WINDOW]),
        "every window must be {CHANNELS} x {WINDOW}"
    );
    let scaler = Standardizer::fit(dataset)?;
    let mut model = SurrogateModel::new(config, scaler, rng)?;
    let mut order_rng = rng.fork_named("shuffle");
    let mut pair_rng = rng.fork_named("pairs");
    let mut drop_rng = rng.fork_named("dropout");
    let adam = AdamConfig { lr: config.lr, ..AdamConfig::default() };
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0u64;
    let mut tape = Tape::new();
    for _ in 0..config.epochs {
        order_rng.shuffle(&mut order);
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            // a trailing single window cannot form batch statistics
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&WindowedSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let x = model.scaler.inputs(&batch)?;
            let targets: Vec<f64> = batch.iter().map(|w| w.target).collect();
            let pairs = sample_index_pairs(batch.len(), config.lipschitz.pairs_per_batch, &mut pair_rng);
            let loss = model.net.loss(
                &mut tape,
                &model.store,
                &x,
                &targets,
                &model.scaler,
                &config.lipschitz,
                &pairs,
                Mode::Train,
                &mut drop_rng,
            )?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numerical(format!("non-finite training loss at step {}", step + 1)));
            }
            total += value * batch.len() as f64;
            seen += batch.len();
            let grads = tape.backward(loss, &model.store)?;
            model.store.zero_grad();
            model.store.accumulate(&grads);
            step += 1;
            adam_step(&mut model.store, &adam, step)?;
        }
        if seen > 0 {
            model.epoch_losses.push(total / seen as f64);
        }
    }
    model.fit_head(dataset)?;
    Ok(model)
}

pub fn predict_next_step(model: &SurrogateModel, window: &WindowedSample) -> Result<(f64, f64)> {
    Ok(model.predict_refs(&[window])?[0])
}

/// Predictions for `base` with channel `channel` shifted uniformly by each
/// increment; returns `(increment, mean, std)` rows.
pub fn ramp_probe(
    model: &SurrogateModel,
    base: &WindowedSample,
    channel: usize,
    increments: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    ensure!(channel < base.inputs.dim(0), "channel {channel} out of range");
    ensure!(increments.first().is_none_or(|&i| i == 0.0), "increments must start at 0");
    ensure!(increments.windows(2).all(|w| w[0] <= w[1]), "increments must be nondecreasing");
    let shifted: Vec<WindowedSample> = increments
        .iter()
        .map(|&inc| {
            let mut w = base.clone();
            let steps = w.inputs.dim(1);
            w.inputs.data_mut()[channel * steps..(channel + 1) * steps].iter_mut().for_each(|v| *v += inc);
            w
        })
        .collect();
    let preds = model.predict(&shifted)?;
    Ok(increments.iter().zip(preds).map(|(&i, (m, s))| (i, m, s)).collect())
}

/// `steps + 1` evenly spaced increments from 0 to `span` training standard
/// deviations of `channel`.
pub fn ramp_increments(model: &SurrogateModel, channel: usize, steps: usize, span: f64) -> Result<Vec<f64>> {
    ensure!(channel < model.scaler.channel_std.len(), "channel {channel} out of range");
    ensure!(steps >= 1 && span >= 0.0, "need at least one step and a nonnegative span");
    let top = span * model.scaler.channel_std[channel];
    Ok((0..=steps).map(|k| top * k as f64 / steps as f64).collect())
}

/// Index of the window with the smallest predictive std; the natural start
/// for a ramp probe.
pub fn least_uncertain(preds: &[(f64, f64)]) -> Result<usize> {
    ensure!(!preds.is_empty(), "no predictions to choose from");
    Ok((0..preds.len()).min_by(|&a, &b| preds[a].1.total_cmp(&preds[b].1)).unwrap_or(0))
}

/// CSV rows `window_id,target,mean,std,ood`.
pub fn write_predictions(path: &Path, windows: &[WindowedSample], preds: &[(f64, f64)]) -> Result<()> {
    ensure!(windows.len() == preds.len(), "{} windows but {} predictions", windows.len(), preds.len());
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "window_id,target,mean,std,ood")?;
    for (win, (m, s)) in windows.iter().zip(preds) {
        writeln!(w, "{},{:.16e},{m:.16e},{s:.16e},{}", win.id, win.target, u8::from(win.ood))?;
    }
    w.flush()?;
    Ok(())
}

/// CSV rows `increment,mean,std`.
pub fn write_probe(path: &Path, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "increment,mean,std")?;
    for (i, m, s) in rows {
        writeln!(w, "{i:.16e},{m:.16e},{s:.16e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Moving average over a centred window of 3 (2 at the ends).
pub fn smooth3(v: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 2).min(v.len());
            v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_booster_series, make_windows, OUTPUT_CHANNEL};
    use crate::diffcore::finite_diff_check;

    fn tiny_config() -> SurrogateConfig {
        SurrogateConfig { epochs: 2, batch_size: 8, conv_features: 6, hidden: 8, features: 32, ..Default::default() }
    }

    fn windows(n: usize, seed: u64) -> Vec<WindowedSample> {
        let s = gen_booster_series(n + WINDOW, &[], &RngStream::new(seed)).unwrap();
        make_windows(&s, OUTPUT_CHANNEL).unwrap()
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mape_loss(&[1.0], &[2.0]).unwrap(), 50.0);
        let v = mape_loss(&[0.001], &[0.0]).unwrap();
        assert!(v.is_finite() && (v - 100.0 * 0.001 / 1e-6).abs() < 1e-6);
        assert!(mape_loss(&[], &[]).is_err());
    }

    #[test]
    fn penalty_examples() {
        let p = LipschitzParams::default();
        assert_eq!(p.pair_term(1.0, 0.5), 0.0625);
        assert_eq!(p.pair_term(0.0, 0.0), 0.0);
        assert_eq!(p.pair_term(0.0, 0.3), 0.3 * 0.3);
        let x = Tensor::new(vec![3, 2], vec![0.0, 1.0, 2.0, -1.0, 0.5, 0.5]).unwrap();
        assert_eq!(bilipschitz_penalty(&x, &x, &p, &mut RngStream::new(0)).unwrap(), 0.0);
        let one = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        assert!(bilipschitz_penalty(&one, &one, &p, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn pair_sampling_is_distinct_and_capped() {
        let all = sample_index_pairs(5, 100, &mut RngStream::new(0));
        assert_eq!(all.len(), 10);
        let some = sample_index_pairs(40, 32, &mut RngStream::new(0));
        assert_eq!(some.len(), 32);
        let set: BTreeSet<_> = some.iter().collect();
        assert_eq!(set.len(), 32);
        assert!(some.iter().all(|&(i, j)| i < j && j < 40));
    }

    #[test]
    fn tape_penalty_matches_plain_penalty() {
        let mut rng = RngStream::new(3);
        let x = Tensor::new(vec![4, 3], (0..12).map(|_| rng.normal()).collect()).unwrap();
        let h = Tensor::new(vec![4, 5], (0..20).map(|_| rng.normal()).collect()).unwrap();
        let p = LipschitzParams::default();
        let plain = bilipschitz_penalty(&x, &h, &p, &mut RngStream::new(1)).unwrap();
        let pairs = sample_index_pairs(4, p.pairs_per_batch, &mut RngStream::new(1));
        let mut tape = Tape::new();
        let hv = tape.constant(h);
        let v = bilipschitz_term(&mut tape, &x, hv, &pairs, &p).unwrap();
        assert!((tape.value(v).item() - plain).abs() < 1e-12);
    }

    #[test]
    fn ramp_probe_contract() {
        let w = windows(40, 1);
        let m = train_surrogate(&w, &tiny_config(), &RngStream::new(2)).unwrap();
        let rows = ramp_probe(&m, &w[0], OUTPUT_CHANNEL, &[0.0, 0.1, 0.2]).unwrap();
        let direct = predict_next_step(&m, &w[0]).unwrap();
        assert_eq!((rows[0].1, rows[0].2), direct);
        assert!(ramp_probe(&m, &w[0], 9, &[0.0]).is_err());
        assert!(ramp_probe(&m, &w[0], 1, &[0.0, 0.2, 0.1]).is_err());
        assert!(ramp_probe(&m, &w[0], 1, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn empty_dataset_refused_and_unfitted_rejected() {
        assert!(train_surrogate(&[], &tiny_config(), &RngStream::new(0)).is_err());
        let w = windows(10, 1);
        let m = SurrogateModel::new(&tiny_config(), Standardizer::fit(&w).unwrap(), &RngStream::new(0)).unwrap();
        assert!(predict_next_step(&m, &w[0]).is_err());
    }

    #[test]
    fn deterministic_and_round_trips() {
        let w = windows(30, 4);
        let a = train_surrogate(&w, &tiny_config(), &RngStream::new(5)).unwrap();
        let b = train_surrogate(&w, &tiny_config(), &RngStream::new(5)).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.to_checkpoint().write_to(&mut ba).unwrap();
        b.to_checkpoint().write_to(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        a.save(&path).unwrap();
        let back = SurrogateModel::load(&path).unwrap();
        assert_eq!(a.predict(&w).unwrap(), back.predict(&w).unwrap());
        assert_eq!(predict_next_step(&a, &w[3]).unwrap(), predict_next_step(&a, &w[3]).unwrap());
    }

    #[test]
    fn zero_weight_penalty_is_plain_mape() {
        let w = windows(12, 2);
        let refs: Vec<&WindowedSample> = w.iter().collect();
        let cfg = tiny_config();
        let mut m = SurrogateModel::new(&cfg, Standardizer::fit(&w).unwrap(), &RngStream::new(1)).unwrap();
        let x = m.scaler.inputs(&refs).unwrap();
        let targets: Vec<f64> = w.iter().map(|s| s.target).collect();
        let pairs = sample_index_pairs(w.len(), 8, &mut RngStream::new(0));
        let off = LipschitzParams { weight: 0.0, ..cfg.lipschitz };
        let mut tape = Tape::new();
        let mut rng = RngStream::new(0);
        let scaler = m.scaler.clone();
        let l = m.net.loss(&mut tape, &m.store, &x, &targets, &scaler, &off, &pairs, Mode::Infer, &mut rng).unwrap();
        let value = tape.value(l).item();
        tape.clear();
        let (out, _) = m.net.forward(&mut tape, &m.store, &x, Mode::Infer, &mut rng).unwrap();
        let preds: Vec<f64> =
            tape.value(out).data().iter().map(|o| o * scaler.target_std + scaler.target_mean).collect();
        assert!((value - mape_loss(&preds, &targets).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        let w = windows(6, 3);
        let refs: Vec<&WindowedSample> = w.iter().collect();
        let cfg = tiny_config();
        let mut m = SurrogateModel::new(&cfg, Standardizer::fit(&w).unwrap(), &RngStream::new(2)).unwrap();
        let beta = m.net.head.beta;
        let d = cfg.features;
        m.store.set_value(beta, Tensor::new(vec![1, d], (0..d).map(|i| 0.5 * (i as f64 * 0.9).sin()).collect()).unwrap()).unwrap();
        let x = m.scaler.inputs(&refs).unwrap();
        let targets: Vec<f64> = w.iter().map(|s| s.target).collect();
        let pairs = sample_index_pairs(w.len(), 8, &mut RngStream::new(0));
        let scaler = m.scaler.clone();
        let lip = cfg.lipschitz;
        let mut net = m.net.clone();
        let report = finite_diff_check(&mut m.store, 1e-5, 32, &mut RngStream::new(0), |tape, store| {
            net.loss(tape, store, &x, &targets, &scaler, &lip, &pairs, Mode::Infer, &mut RngStream::new(0))
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn smoothing() {
        assert_eq!(smooth3(&[0.0, 3.0, 6.0]), vec![1.5, 3.0, 4.5]);
    }
}
