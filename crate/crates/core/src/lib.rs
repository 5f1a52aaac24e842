//! One-shot domain adaptation by adversarial style mining, at desk scale.
//!
//! The crate is organised bottom-up: [`numcore`] (tensors, autodiff,
//! optimizers), [`models`] (network topologies), [`rain`] (the stylized-image
//! generator), [`miner`] (the adversarial training loop and baselines),
//! [`data`] and [`io`] (datasets, checkpoints, configs, metrics) and [`cli`]
//! (subcommand orchestration).

pub mod cli;
pub mod data;
pub mod error;
pub mod io;
pub mod miner;
pub mod models;
pub mod numcore;
pub mod rain;

pub use error::{Error, Result};
