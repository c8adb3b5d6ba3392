//! Delayed-feedback conversion-rate modeling on simulated and logged click
//! streams.
//!
//! The crate covers the whole loop: ground-truth click generation
//! ([`synthgen`]) or log parsing ([`ingest`]), duplication of clicks into an
//! observed training stream ([`pipelines`]), importance-weighted losses
//! ([`losses`]), models and their optimizer ([`model`]), evaluation
//! ([`metrics`]) and the hour-by-hour streaming driver ([`harness`]).

pub mod error;
pub mod harness;
pub mod ingest;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipelines;
pub mod synthgen;
pub mod types;

pub use error::{Error, Result};
pub use losses::{LossKind, ZSource};
pub use metrics::MetricsReport;
pub use model::PredictionBundle;
pub use pipelines::Mechanism;
pub use synthgen::{GenConfig, GroundTruthModel};
pub use types::{ClickEvent, Features, ObservedSample, SampleKind, Seconds, WindowConfig};
