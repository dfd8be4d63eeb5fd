//! Network building blocks for the two trunks: 1-D convolution, dense,
//! batch normalisation, max pooling, dropout, spectral normalisation and
//! the residual block, plus [`build_encoder`] to assemble them.

mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod encoder;
mod resnet;
mod spectral;

pub use batchnorm::BatchNorm1D;
pub use conv::Conv1DLayer;
pub use dense::{Activation, Dense};
pub use dropout::dropout;
pub use encoder::{build_encoder, Encoder, EncoderSpec, Stage, StageSpec};
pub use resnet::ResNetBlock;
pub use spectral::{power_iteration_norm, spectral_normalize, SpectralState, DEFAULT_BOUND};

use crate::diffcore::{Tape, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Size-`size` max pooling over `[batch, ch, len]`; odd tails form their own window.
pub fn maxpool1d(tape: &mut Tape, x: Var, size: usize) -> Result<Var> {
    tape.max_pool1d(x, size)
}
