use serde::{Deserialize, Serialize};

use super::{dropout, Activation, BatchNorm1D, Conv1DLayer, Dense, Mode, ResNetBlock};
use crate::diffcore::{Checkpoint, InitScheme, Padding, ParamId, ParamStore, RngStream, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageSpec {
    /// Residual block with strided convolution, batch norm, pooling and relu.
    ResNet { filters: usize, kernel: usize, stride: usize, pool: usize, dropout: f64 },
    /// `conv(stride 1) -> tanh -> batch norm -> max pool -> dropout`.
    ConvTanh { filters: usize, kernel: usize, pool: usize, dropout: f64 },
    Flatten,
    Dense { units: usize, activation: DenseActivation },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenseActivation {
    Relu,
    Tanh,
    None,
}

impl From<DenseActivation> for Activation {
    fn from(a: DenseActivation) -> Self {
        match a {
            DenseActivation::Relu => Activation::Relu,
            DenseActivation::Tanh => Activation::Tanh,
            DenseActivation::None => Activation::None,
        }
    }
}

/// Input geometry plus an ordered list of stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub in_channels: usize,
    pub input_len: usize,
    pub stages: Vec<StageSpec>,
}

impl EncoderSpec {
    /// Twin-network trunk: four residual blocks (16, 32, 64, 128 filters,
    /// kernel 3, stride 2, pool 2, dropout 0.05), then flatten.
    pub fn siamese(input_len: usize) -> Self {
        Self::siamese_with_filters(input_len, &[16, 32, 64, 128])
    }

    pub fn siamese_with_filters(input_len: usize, filters: &[usize]) -> Self {
        let mut stages: Vec<StageSpec> = filters
            .iter()
            .map(|&f| StageSpec::ResNet { filters: f, kernel: 3, stride: 2, pool: 2, dropout: 0.05 })
            .collect();
        stages.push(StageSpec::Flatten);
        Self { in_channels: 1, input_len, stages }
    }

    /// Regression trunk: three `ConvTanh` stages of `features` filters
    /// (kernel 3, pool 2, dropout 0.1), flatten, dense(`hidden`, tanh).
    pub fn surrogate(in_channels: usize, window: usize, features: usize, hidden: usize) -> Self {
        let mut stages = vec![StageSpec::ConvTanh { filters: features, kernel: 3, pool: 2, dropout: 0.1 }; 3];
        stages.push(StageSpec::Flatten);
        stages.push(StageSpec::Dense { units: hidden, activation: DenseActivation::Tanh });
        Self { in_channels, input_len: window, stages }
    }
}

#[derive(Clone, Debug)]
pub enum Stage {
    ResNet(ResNetBlock),
    ConvTanh { conv: Conv1DLayer, norm: BatchNorm1D, pool: usize, dropout: f64 },
    Flatten,
    Dense(Dense),
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub stages: Vec<Stage>,
    output_shape: Vec<usize>,
}

fn build_err(msg: String) -> Error {
    Error::Contract(format!("cannot build encoder: {msg}"))
}

/// Instantiates `spec`, registering parameters in `store` under `prefix`.
/// Fails if the stack is empty or the input is too short for some stage
/// (a convolution seeing fewer samples than its kernel, or a pool fewer
/// samples than its window).
pub fn build_encoder(spec: &EncoderSpec, store: &mut ParamStore, prefix: &str, rng: &mut RngStream) -> Result<Encoder> {
    if spec.stages.is_empty() {
        return Err(build_err("architecture has no stages".into()));
    }
    if spec.in_channels == 0 || spec.input_len == 0 {
        return Err(build_err("input geometry must be positive".into()));
    }
    // (channels, len) while sequential, (width,) once flattened
    let mut shape = vec![spec.in_channels, spec.input_len];
    let mut stages = Vec::with_capacity(spec.stages.len());
    for (i, st) in spec.stages.iter().enumerate() {
        let name = format!("{prefix}{i}");
        let need_seq = |shape: &[usize], what: &str| -> Result<(usize, usize)> {
            if shape.len() != 2 {
                return Err(build_err(format!("stage {i} ({what}) needs a sequence input, got a flat vector")));
            }
            Ok((shape[0], shape[1]))
        };
        match *st {
            StageSpec::ResNet { filters, kernel, stride, pool, dropout } => {
                let (c, len) = need_seq(&shape, "resnet")?;
                if len < kernel {
                    return Err(build_err(format!(
                        "stage {i}: length {len} is shorter than kernel {kernel}; input length {} too short",
                        spec.input_len
                    )));
                }
                let conv_len = len.div_ceil(stride);
                if conv_len < pool {
                    return Err(build_err(format!(
                        "stage {i}: length {conv_len} cannot fill a pool window of {pool}; input length {} too short",
                        spec.input_len
                    )));
                }
                let block = ResNetBlock::new(store, &name, c, filters, kernel, stride, pool, dropout, rng)?;
                stages.push(Stage::ResNet(block));
                shape = vec![filters, conv_len.div_ceil(pool)];
            }
            StageSpec::ConvTanh { filters, kernel, pool, dropout } => {
                let (c, len) = need_seq(&shape, "conv")?;
                if len < kernel || len < pool {
                    return Err(build_err(format!(
                        "stage {i}: length {len} too short for kernel {kernel} / pool {pool}; input length {} too short",
                        spec.input_len
                    )));
                }
                let conv = Conv1DLayer::with_init(
                    store,
                    &format!("{name}.conv"),
                    c,
                    filters,
                    kernel,
                    1,
                    Padding::Same,
                    InitScheme::LeCun,
                    rng,
                )?;
                let norm = BatchNorm1D::new(store, &format!("{name}.bn"), filters);
                stages.push(Stage::ConvTanh { conv, norm, pool, dropout });
                shape = vec![filters, len.div_ceil(pool)];
            }
            StageSpec::Flatten => {
                shape = vec![shape.iter().product()];
                stages.push(Stage::Flatten);
            }
            StageSpec::Dense { units, activation } => {
                if shape.len() != 1 {
                    return Err(build_err(format!("stage {i}: dense layer needs a flattened input")));
                }
                let d = Dense::new(store, &name, shape[0], units, activation.into(), rng)?;
                stages.push(Stage::Dense(d));
                shape = vec![units];
            }
        }
    }
    Ok(Encoder { spec: spec.clone(), stages, output_shape: shape })
}

impl Encoder {
    /// Per-sample output shape: `[channels, len]` or `[width]`.
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn output_width(&self) -> usize {
        self.output_shape.iter().product()
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Var> {
        let shape = tape.shape(x);
        crate::error::ensure!(
            shape.len() == 3 && shape[1] == self.spec.in_channels && shape[2] == self.spec.input_len,
            "encoder expects [batch, {}, {}], got {shape:?}",
            self.spec.in_channels,
            self.spec.input_len
        );
        let mut h = x;
        for stage in &mut self.stages {
            h = match stage {
                Stage::ResNet(b) => b.forward(tape, store, h, mode, rng)?,
                Stage::ConvTanh { conv, norm, pool, dropout: rate } => {
                    let y = conv.forward(tape, store, h)?;
                    let y = tape.tanh(y);
                    let y = norm.forward(tape, store, y, mode)?;
                    let y = tape.max_pool1d(y, *pool)?;
                    dropout(tape, y, *rate, mode, rng)?
                }
                Stage::Flatten => tape.flatten(h)?,
                Stage::Dense(d) => d.forward(tape, store, h)?,
            };
        }
        Ok(h)
    }

    /// Convolution, projection and dense weights, in stage order.
    pub fn weights(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for s in &self.stages {
            match s {
                Stage::ResNet(b) => out.extend(b.weights()),
                Stage::ConvTanh { conv, .. } => out.push(conv.weight),
                Stage::Dense(d) => out.push(d.weight),
                Stage::Flatten => {}
            }
        }
        out
    }

    pub fn save_buffers(&self, ckpt: &mut Checkpoint, prefix: &str) {
        for s in &self.stages {
            match s {
                Stage::ResNet(b) => b.save_buffers(ckpt, prefix),
                Stage::ConvTanh { norm, .. } => norm.save_buffers(ckpt, prefix),
                _ => {}
            }
        }
    }

    pub fn restore_buffers(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
        for s in &mut self.stages {
            match s {
                Stage::ResNet(b) => b.restore_buffers(ckpt, prefix)?,
                Stage::ConvTanh { norm, .. } => norm.restore_buffers(ckpt, prefix)?,
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn siamese_preset_embeds_to_128() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        let mut enc = build_encoder(&EncoderSpec::siamese(256), &mut store, "enc.", &mut rng).unwrap();
        assert_eq!(enc.output_shape(), &[128]);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[3, 1, 256], 0.1));
        let y = enc.forward(&mut tape, &store, x, Mode::Infer, &mut rng).unwrap();
        assert_eq!(tape.shape(y), &[3, 128]);
    }

    #[test]
    fn surrogate_preset_ends_in_256() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        let mut enc = build_encoder(&EncoderSpec::surrogate(5, 15, 256, 256), &mut store, "trunk.", &mut rng).unwrap();
        assert_eq!(enc.output_width(), 256);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 5, 15], 0.1));
        let y = enc.forward(&mut tape, &store, x, Mode::Train, &mut rng).unwrap();
        assert_eq!(tape.shape(y), &[2, 256]);
    }

    #[test]
    fn empty_and_too_short_rejected() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        let empty = EncoderSpec { in_channels: 1, input_len: 16, stages: vec![] };
        assert!(build_encoder(&empty, &mut store, "e.", &mut rng).is_err());
        let err = build_encoder(&EncoderSpec::siamese(16), &mut store, "s.", &mut rng).unwrap_err();
        assert!(err.to_string().contains("too short"), "{err}");
    }

    #[test]
    fn spec_round_trips_through_serde() {
        let spec = EncoderSpec::surrogate(5, 15, 8, 4);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<EncoderSpec>(&json).unwrap(), spec);
    }
}
