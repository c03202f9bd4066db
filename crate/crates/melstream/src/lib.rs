//! Streaming single-channel Mel-spectrogram speech enhancement.
//!
//! The crate implements the full pipeline: STFT/log-mel frontend, context
//! framing, offline/online/ASR normalization, an interleaved
//! full-band/sub-band recurrent network with streaming inference,
//! desk-scale training with hand-written verified gradients, deterministic
//! Griffin-Lim resynthesis, a synthetic corpus generator and evaluation
//! probes.
//!
//! Data-parallel loops (independent sequences within a layer, per-utterance
//! gradients, corpus entries) run on rayon when the default `parallel`
//! feature is enabled and sequentially otherwise; results are bit-identical
//! either way because all reductions happen in fixed index order.

pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod model;
pub(crate) mod par;
pub mod pipeline;
pub mod real;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
