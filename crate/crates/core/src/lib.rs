//! Distance-aware uncertainty for deep models.
//!
//! A deterministic network trunk feeds a Gaussian-process output layer built
//! from random Fourier features. After training, a Laplace-style precision
//! matrix over the output weights turns every prediction into a
//! `(mean, standard deviation)` pair whose spread grows with distance from
//! the training data.
//!
//! Two pipelines are provided:
//!
//! * [`siamese`]: a twin 1-D ResNet encoder with a contrastive objective for
//!   pairwise anomaly scoring.
//! * [`surrogate`]: a 1-D convolutional next-step regressor trained with MAPE
//!   plus a bi-Lipschitz penalty on its last hidden layer.
//!
//! [`data`] generates the synthetic workloads and [`evalkit`] holds ROC,
//! uncertainty-smearing and exact-GP reference tools.

// negated float comparisons are deliberate: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod gp_head;
pub mod layers;
pub mod siamese;
pub mod surrogate;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
