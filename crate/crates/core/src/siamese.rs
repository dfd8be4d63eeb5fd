//! Twin-network pulse classifier with a Gaussian-process output layer.
//!
//! Both traces of a pair run through one encoder (a single batch of `2B`
//! traces, so the weights and the batch statistics are shared). The two
//! embeddings are combined coordinate-wise as `dᵢ = |x1ᵢ² − x2ᵢ²|`, passed
//! through a 128-unit relu layer and the GP head, whose output `y′` is
//! trained with the margin-based contrastive loss
//!
//! ```text
//! L = α (1 − y) y′² + (1 − α) y max(β − y′, 0)²
//! ```
//!
//! Hidden weights are kept under the spectral bound by projecting after
//! every optimiser step.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PulsePair;
use crate::diffcore::{adam_step, AdamConfig, Checkpoint, ParamId, ParamStore, RngStream, Tape, Tensor, Var};
use crate::error::{ensure, Error, Result};
use crate::gp_head::{sigmoid, GpHead, Task};
use crate::layers::{build_encoder, Activation, Dense, Encoder, EncoderSpec, Mode, SpectralState};

/// Head width after the embedding difference.
pub const HEAD_UNITS: usize = 128;
const WARMUP_ITERATIONS: usize = 50;

/// `|Σᵢ (x1ᵢ² − x2ᵢ²)|`.
pub fn similarity_score(x1: &[f64], x2: &[f64]) -> Result<f64> {
    ensure!(x1.len() == x2.len(), "embeddings differ in length: {} vs {}", x1.len(), x2.len());
    Ok(x1.iter().zip(x2).map(|(a, b)| a * a - b * b).sum::<f64>().abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveParams {
    pub alpha: f64,
    pub margin: f64,
}

impl Default for ContrastiveParams {
    fn default() -> Self {
        Self { alpha: 0.5, margin: 1.0 }
    }
}

impl ContrastiveParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.alpha > 0.0 && self.alpha < 1.0, "alpha must lie in (0, 1), got {}", self.alpha);
        ensure!(self.margin > 0.0, "margin must be positive, got {}", self.margin);
        Ok(())
    }
}

pub fn contrastive_loss(y: u8, y_prime: f64, params: &ContrastiveParams) -> f64 {
    let y = f64::from(y);
    let hinge = (params.margin - y_prime).max(0.0);
    params.alpha * (1.0 - y) * y_prime * y_prime + (1.0 - params.alpha) * y * hinge * hinge
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiameseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub contrastive: ContrastiveParams,
    pub trace_len: usize,
    pub filters: Vec<usize>,
    /// Random Fourier features `D`.
    pub features: usize,
    pub length_scale: f64,
    /// Prior precision `s`.
    pub ridge: f64,
    pub spectral_bound: f64,
    pub power_iterations: usize,
}

impl Default for SiameseConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            contrastive: ContrastiveParams::default(),
            trace_len: crate::data::TRACE_LEN,
            filters: vec![16, 32, 64, 128],
            features: crate::gp_head::DEFAULT_FEATURES,
            length_scale: 8.0,
            ridge: 1.0,
            spectral_bound: crate::layers::DEFAULT_BOUND,
            power_iterations: 1,
        }
    }
}

impl SiameseConfig {
    pub fn validate(&self) -> Result<()> {
        self.contrastive.validate()?;
        ensure!(self.batch_size >= 1, "batch size must be positive");
        ensure!(self.lr > 0.0, "learning rate must be positive");
        ensure!(!self.filters.is_empty(), "need at least one residual block");
        ensure!(self.features > 0, "feature count must be positive");
        ensure!(self.length_scale > 0.0, "length scale must be positive");
        ensure!(self.ridge > 0.0, "ridge must be positive");
        ensure!(self.spectral_bound > 0.0, "spectral bound must be positive");
        ensure!(self.power_iterations >= 1, "need at least one power iteration");
        Ok(())
    }
}

/// Network pieces, separate from the parameter store so a loss closure can
/// borrow them while the store is perturbed.
#[derive(Clone, Debug)]
pub struct SiameseNet {
    pub encoder: Encoder,
    pub dense: Dense,
    pub head: GpHead,
}

fn stack_traces(pairs: &[&PulsePair], len: usize) -> Result<Tensor> {
    let b = pairs.len();
    let mut data = Vec::with_capacity(2 * b * len);
    for p in pairs {
        ensure!(p.trace_a.len() == len, "pair {} trace a has {} samples, encoder expects {len}", p.id, p.trace_a.len());
        data.extend_from_slice(p.trace_a.data());
    }
    for p in pairs {
        ensure!(p.trace_b.len() == len, "pair {} trace b has {} samples, encoder expects {len}", p.id, p.trace_b.len());
        data.extend_from_slice(p.trace_b.data());
    }
    Tensor::new(vec![2 * b, 1, len], data)
}

impl SiameseNet {
    /// Returns `(y′ [B, 1], φ [B, D])` for a batch of pairs.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        pairs: &[&PulsePair],
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Var, Var)> {
        ensure!(!pairs.is_empty(), "empty pair batch");
        let b = pairs.len();
        let x = tape.constant(stack_traces(pairs, self.encoder.spec.input_len)?);
        let e = self.encoder.forward(tape, store, x, mode, rng)?;
        let e = tape.flatten(e)?;
        let sq = tape.square(e);
        let s1 = tape.slice_rows(sq, 0, b)?;
        let s2 = tape.slice_rows(sq, b, 2 * b)?;
        let diff = tape.sub(s1, s2)?;
        let d = tape.abs(diff);
        let h = self.dense.forward(tape, store, d)?;
        self.head.forward(tape, store, h)
    }

    /// Mean contrastive loss over the batch.
    pub fn loss(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        pairs: &[&PulsePair],
        params: &ContrastiveParams,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Var> {
        let (out, _) = self.forward(tape, store, pairs, mode, rng)?;
        let b = pairs.len();
        let w0: Vec<f64> = pairs.iter().map(|p| params.alpha * f64::from(1 - p.label)).collect();
        let w1: Vec<f64> = pairs.iter().map(|p| (1.0 - params.alpha) * f64::from(p.label)).collect();
        let w0 = tape.constant(Tensor::new(vec![b, 1], w0)?);
        let w1 = tape.constant(Tensor::new(vec![b, 1], w1)?);
        let near = tape.square(out);
        let near = tape.mul(w0, near)?;
        let neg = tape.scale(out, -1.0);
        let gap = tape.add_scalar(neg, params.margin);
        let gap = tape.relu(gap);
        let far = tape.square(gap);
        let far = tape.mul(w1, far)?;
        let total = tape.add(near, far)?;
        Ok(tape.mean(total))
    }

    /// Weights under the spectral constraint: every convolution (main and
    /// skip path) and the head's dense layer.
    pub fn constrained_weights(&self) -> Vec<ParamId> {
        let mut w = self.encoder.weights();
        w.push(self.dense.weight);
        w
    }
}

#[derive(Clone, Debug)]
pub struct SiameseModel {
    pub config: SiameseConfig,
    pub store: ParamStore,
    pub net: SiameseNet,
    pub spectral: Vec<(ParamId, SpectralState)>,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl SiameseModel {
    pub fn new(config: &SiameseConfig, rng: &RngStream) -> Result<Self> {
        config.validate()?;
        let mut init = rng.fork_named("init");
        let mut store = ParamStore::new();
        let spec = EncoderSpec::siamese_with_filters(config.trace_len, &config.filters);
        let encoder = build_encoder(&spec, &mut store, "enc.", &mut init)?;
        let width = encoder.output_width();
        let dense = Dense::new(&mut store, "head.dense", width, HEAD_UNITS, Activation::Relu, &mut init)?;
        let mut head =
            GpHead::new(&mut store, "head.gp.", HEAD_UNITS, config.features, config.length_scale, config.ridge, &mut init)?;
        // identical pairs sit near y′ = 0, dissimilar ones at or beyond the margin
        head.link.offset = config.contrastive.margin / 2.0;
        head.link.scale = 4.0 / config.contrastive.margin;
        let net = SiameseNet { encoder, dense, head };
        let mut spectral = Vec::new();
        for id in net.constrained_weights() {
            let mut st = SpectralState::new(store.value(id).shape(), config.spectral_bound, WARMUP_ITERATIONS, &mut init)?;
            // converge once from the random start, then track with the configured count
            st.estimate(store.value(id))?;
            st.iterations = config.power_iterations;
            spectral.push((id, st));
        }
        let mut model = Self { config: config.clone(), store, net, spectral, epoch_losses: Vec::new() };
        model.project()?;
        Ok(model)
    }

    /// Rescales every constrained weight to spectral norm at most the bound.
    pub fn project(&mut self) -> Result<()> {
        for (id, state) in &mut self.spectral {
            let (w, scale) = crate::layers::spectral_normalize(self.store.value(*id), state)?;
            if scale != 1.0 {
                self.store.set_value(*id, w)?;
            }
        }
        Ok(())
    }

    /// Head outputs and features in inference mode, in chunks of `batch`.
    pub fn infer(&self, pairs: &[PulsePair]) -> Result<(Vec<f64>, Tensor)> {
        let mut net = self.net.clone();
        let mut rng = RngStream::new(0);
        let d = net.head.features();
        let mut outs = Vec::with_capacity(pairs.len());
        let mut phis = Vec::with_capacity(pairs.len() * d);
        let refs: Vec<&PulsePair> = pairs.iter().collect();
        for chunk in refs.chunks(self.config.batch_size.max(64)) {
            let mut tape = Tape::new();
            let (out, phi) = net.forward(&mut tape, &self.store, chunk, Mode::Infer, &mut rng)?;
            outs.extend_from_slice(tape.value(out).data());
            phis.extend_from_slice(tape.value(phi).data());
        }
        Ok((outs, Tensor::new(vec![pairs.len(), d], phis)?))
    }

    /// Fits the head precision with Laplace weights `p(1 − p)`.
    pub fn fit_head(&mut self, pairs: &[PulsePair]) -> Result<()> {
        if pairs.is_empty() {
            return self.net.head.fit_precision(None, &[]);
        }
        let (outs, phi) = self.infer(pairs)?;
        let link = self.net.head.link;
        let weights: Vec<f64> = outs
            .iter()
            .map(|&o| {
                let p = sigmoid(link.logit(o));
                p * (1.0 - p)
            })
            .collect();
        self.net.head.fit_precision(Some(&phi), &weights)
    }

    /// `(probability of a normal–anomalous pair, predictive std)` per pair.
    pub fn predict(&self, pairs: &[PulsePair]) -> Result<Vec<(f64, f64)>> {
        ensure!(self.net.head.is_fitted(), "GP head precision has not been fitted");
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let (_, phi) = self.infer(pairs)?;
        let preds = self.net.head.predict_features(&self.store, &phi, Task::Binary)?;
        Ok(preds.into_iter().map(|p| (p.mean, p.std)).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let c = &self.config;
        ck.push_scalar("meta.trace_len", c.trace_len as f64);
        ck.push("meta.filters", Tensor::from_vec(c.filters.iter().map(|&f| f as f64).collect()));
        ck.push_scalar("meta.features", c.features as f64);
        ck.push_scalar("meta.spectral_bound", c.spectral_bound);
        ck.push_scalar("meta.alpha", c.contrastive.alpha);
        ck.push_scalar("meta.margin", c.contrastive.margin);
        ck.push_params("param.", &self.store);
        self.net.encoder.save_buffers(&mut ck, "buf.");
        self.net.head.save(&mut ck, "gp.");
        for (i, (_, st)) in self.spectral.iter().enumerate() {
            ck.push(format!("spectral.{i}.u"), Tensor::from_vec(st.u.clone()));
            ck.push(format!("spectral.{i}.v"), Tensor::from_vec(st.v.clone()));
        }
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
        let config = SiameseConfig {
            trace_len: count("meta.trace_len")?,
            filters: ck.require("meta.filters")?.data().iter().map(|&f| f as usize).collect(),
            features: count("meta.features")?,
            spectral_bound: ck.scalar("meta.spectral_bound")?,
            contrastive: ContrastiveParams { alpha: ck.scalar("meta.alpha")?, margin: ck.scalar("meta.margin")? },
            ..SiameseConfig::default()
        };
        let mut model = Self::new(&config, &RngStream::new(0))?;
        ck.restore_params("param.", &mut model.store)?;
        model.net.encoder.restore_buffers(ck, "buf.")?;
        model.net.head.restore(ck, "gp.")?;
        model.config.length_scale = model.net.head.rff.length_scale;
        model.config.ridge = model.net.head.ridge;
        for (i, (_, st)) in model.spectral.iter_mut().enumerate() {
            st.u = ck.require(&format!("spectral.{i}.u"))?.data().to_vec();
            st.v = ck.require(&format!("spectral.{i}.v"))?.data().to_vec();
        }
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

/// `(y′, φ)` for one pair.
pub fn pair_forward(model: &SiameseModel, pair: &PulsePair, mode: Mode, rng: &mut RngStream) -> Result<(f64, Tensor)> {
    let mut net = model.net.clone();
    let mut tape = Tape::new();
    let (out, phi) = net.forward(&mut tape, &model.store, &[pair], mode, rng)?;
    Ok((tape.value(out).item(), tape.value(phi).clone()))
}

pub fn predict_pair(model: &SiameseModel, pair: &PulsePair) -> Result<(f64, f64)> {
    Ok(model.predict(std::slice::from_ref(pair))?[0])
}

/// Mini-batch Adam on the contrastive loss with a spectral projection after
/// every step, then a Laplace fit of the head precision on the training
/// pairs.
pub fn train_siamese(dataset: &[PulsePair], config: &SiameseConfig, rng: &RngStream) -> Result<SiameseModel> {
    let positives = dataset.iter().filter(|p| p.label == 1).count();
    ensure!(
        positives > 0 && positives < dataset.len(),
        "training needs both pair labels; got {} pairs with {positives} labelled 1",
        dataset.len()
    );
    let mut model = SiameseModel::new(config, rng)?;
    let mut order_rng = rng.fork_named("shuffle");
    let mut drop_rng = rng.fork_named("dropout");
    let adam = AdamConfig { lr: config.lr, ..AdamConfig::default() };
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0u64;
    let mut tape = Tape::new();
    for _ in 0..config.epochs {
        order_rng.shuffle(&mut order);
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            // batch statistics need two samples per batch; 2B traces always qualify
            let batch: Vec<&PulsePair> = chunk.iter().map(|&i| &dataset[i]).collect();
            let loss = model.net.loss(&mut tape, &model.store, &batch, &config.contrastive, Mode::Train, &mut drop_rng)?;
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
            model.project()?;
        }
        model.epoch_losses.push(total / seen as f64);
    }
    if config.epochs == 0 {
        model.net.head.fit_precision(None, &[])?;
    } else {
        model.fit_head(dataset)?;
    }
    Ok(model)
}

/// CSV rows `pair_id,label,probability,uncertainty`.
pub fn write_predictions(path: &Path, pairs: &[PulsePair], preds: &[(f64, f64)]) -> Result<()> {
    ensure!(pairs.len() == preds.len(), "{} pairs but {} predictions", pairs.len(), preds.len());
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "pair_id,label,probability,uncertainty")?;
    for (p, (prob, std)) in pairs.iter().zip(preds) {
        writeln!(w, "{},{},{prob:.16e},{std:.16e}", p.id, p.label)?;
    }
    w.flush()?;
    Ok(())
}
