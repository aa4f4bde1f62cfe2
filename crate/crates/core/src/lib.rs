//! Tracking-by-detection with track-level quality aggregation for
//! conveyor-belt fruit inspection.
//!
//! A detection stream (from any detector/classifier, or from [`sim`]) is
//! linked into persistent identities by a BYTE two-stage tracker
//! ([`tracker`]). Per-frame category observations are buffered per track and
//! reduced to one label by majority vote ([`aggregation`]). [`metrics`]
//! scores the result at video level: defect ratio and temporal stability,
//! plus classification, detection AP and identity-switch counts.

pub mod aggregation;
pub mod assignment;
pub mod error;
pub mod io;
pub mod kalman;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sim;
pub mod tracker;

pub use error::{Error, Result};
pub use model::{
    iou, to_binary, BinaryQuality, BoundingBox, CategoryLabel, Detection, FrameDetections, Track, TrackId,
    TrackStatus,
};
