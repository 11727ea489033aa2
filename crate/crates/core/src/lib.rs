//! Occupational coding toolkit.
//!
//! Maps free-text occupational descriptions, tagged with a language, to sets of
//! HISCO codes using a small character-level transformer encoder trained from
//! scratch. The crate covers the whole pipeline: label space handling, data
//! preparation, input encoding and augmentation, the network with its
//! hand-written backward pass, threshold calibration, and the diagnostics used
//! to judge a trained model.

pub mod analysis;
pub mod calibrate;
pub mod hisco;
pub mod ingest;
pub mod nn;
pub mod rng;
pub mod textenc;

pub use calibrate::{MetricReport, PredictionMatrix, ThresholdTable};
pub use hisco::{HiscamTable, HiscoCode, LabelSpace, OccupationRecord};
pub use ingest::CleanDataset;
pub use nn::{Checkpoint, ModelConfig, Parameters, TrainConfig};
pub use textenc::{EncodedInput, LanguageTag};
