//! Forecasting engine for multivariate time series with missing values.
//!
//! Local statistics (last observation, running mean, learned decay) are
//! fused with a globally trained attention memory and fed to an LSTM that
//! rolls the forecast forward. Training combines a masked forecasting loss
//! with a Wasserstein critic that scores extra generated steps.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and the
//! experiment drivers live in the `lgnet` companion crate.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod autodiff;
pub mod critic;
pub mod data;
pub mod error;
pub mod forecaster;
pub mod local_stats;
pub mod memory;
pub mod metrics;
pub mod params;
mod gemm;
pub mod tensor;
pub mod trainer;

pub use autodiff::{grad_check, Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
