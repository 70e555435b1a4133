//! Dual-rate streaming speech enhancement.
//!
//! A slow branch (dense layer, GRU stack, dense head) runs once every
//! `reuse` fast frames and emits a modulation packet. A fast branch, a small
//! diagonal state-space layer, consumes every 2 ms frame and is conditioned
//! by the most recent packet. Three conditioning variants ship with the
//! crate (`ssmm`, `film`, `ec`) and more can be registered at runtime.

pub mod config;
pub mod engine;
pub mod error;
pub mod eval_bench;
pub mod fast_branch;
pub mod kv;
pub mod model;
pub mod nn;
pub mod persistence;
pub mod signal_io;
pub mod slow_branch;
pub mod training;

pub use config::SlowFastConfig;
pub use engine::{enhance_chunked, enhance_offline, StreamSession};
pub use error::{Error, Result};
pub use fast_branch::{registry, FastVariant, ModulationPacket, VariantRegistry};
pub use model::{passthrough_weights, GradientSet, ModelWeights};
pub use persistence::{load_model, save_model, ModelFileError};
pub use signal_io::{read_wav, write_wav, AudioBuffer, SAMPLE_RATE};
