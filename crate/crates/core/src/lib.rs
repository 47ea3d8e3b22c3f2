//! Basketball tracking-data analytics: the canonical frame model, preprocessing
//! from raw frames to fixed-length play windows, rule-based weak labeling of
//! pick-and-rolls and handoffs, a scripted-play generator and evaluation metrics.

pub mod error;
pub mod frame;
pub mod ingest;
pub mod labels;
pub mod metrics;
pub mod possession;
pub mod segment;
pub mod synth;
pub mod transform;
pub mod weak;

pub use error::{Error, Result};
pub use frame::{Orientation, PlayerPosition, Team, TrackingFrame};
pub use labels::{LabelRecord, LabelSource, PlayClass};
pub use segment::{DatasetSplit, PlaySegment, Provenance, Role};
