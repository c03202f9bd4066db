//! The interleaved full-band/sub-band recurrent network: context embeddings,
//! bidirectional full-band passes along frequency, gated hand-off into
//! per-frequency sub-band passes along time, and the D-to-1 output head.

pub mod config;
pub mod forward;
pub mod lstm;
pub mod params;
pub mod streaming;

pub use config::{Mode, ModelConfig, NormMode};
pub use forward::{forward, gate_apply};
pub use lstm::{lstm_sequence, Direction};
pub use params::{init_parameters, param_count, GradientSet, LstmWeights, Parameters, Tensor};
pub use streaming::{forward_streaming, RecurrentState};
