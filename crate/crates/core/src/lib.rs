//! Real-time crash risk modelling for signalized urban arterials.
//!
//! Raw Bluetooth travel times, intersection volumes, signal phases and
//! hourly weather are aggregated into 5-minute slices before each crash,
//! paired with same-clock windows on other weeks, and fitted with a
//! Bayesian conditional logistic model. Pooled and random-effect logistic
//! models are provided for comparison, along with DIC, relative-odds
//! scoring and ROC/AUC.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod ingest;
pub mod kv;
pub mod matching;
pub mod models;
pub mod report;
pub mod sampler;
pub mod simulator;
pub mod time;

pub use error::{Error, Result};
pub use fit::{fit_model, FitConfig, FittedModel};
pub use matching::{FeatureSpec, MatchedDataset};
pub use models::{Grouping, ModelKind};
pub use time::Timestamp;
