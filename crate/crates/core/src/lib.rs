//! Joint subband CNN countermeasure for replay spoofing detection.
//!
//! Pipeline: waveform front end, subband partition, per-band CNNs, joint
//! fine-tuning, score fusion and EER / min t-DCF evaluation.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod frontend;
pub mod fusion;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod report;
pub mod scores;
pub mod subband;
pub mod training;

pub use error::{Error, Result};
