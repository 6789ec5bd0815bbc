//! Per-utterance input switching between observed mixtures and enhanced
//! speech for black-box ASR back-ends.
//!
//! The crate covers the full experimental loop: SIR/SNR-controlled mixture
//! simulation, log-mel feature extraction, CER-based label generation, the
//! rule-based and learned switching policies, oracle baselines, and the
//! adapter protocol for plugging in external speech-enhancement and ASR
//! tools.

pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod rule;
pub mod signal;
pub mod wav;

pub use error::{Error, Result};
