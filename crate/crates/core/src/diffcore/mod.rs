//! Tensors, reverse-mode differentiation, initialisation, Adam, gradient
//! checking and checkpoints. Everything above this module builds its forward
//! pass on [`Tape`].

mod adam;
mod checkpoint;
mod gradcheck;
mod init;
mod param;
mod rng;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use gradcheck::{finite_diff_check, GradCheckReport, ParamCheck, MIN_PROBED_COORDS};
pub use init::{seeded_init, InitScheme};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use rng::RngStream;
pub(crate) use tape::gemm;
pub use tape::{conv_out_len, NormStats, Padding, Tape, Var};
pub use tensor::Tensor;
