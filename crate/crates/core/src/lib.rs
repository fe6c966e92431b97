//! Multi-object tracking by graph-based tracklet association.
//!
//! The pipeline turns per-frame detections into identity-stable trajectories:
//! a sequence is cut into non-overlapping subclips, each subclip is resolved
//! bottom-up by a tracklet hierarchy (windows doubling in size, one shared
//! message-passing model scoring every graph), and consecutive subclips are
//! fused by an autoregressive linking step that matches the tracks carried so
//! far against the new subclip's tracklets. Stride 1 degenerates into a fully
//! online tracker; large strides give offline behavior with more context per
//! decision.
//!
//! The crate also ships a heuristic Hungarian baseline, CLEAR/IDF1/HOTA
//! metrics, a seeded synthetic-sequence generator used for training and
//! ablations, and a CLI wiring it all together.

pub mod ablate;
pub mod baseline;
pub mod cli;
pub mod config;
pub mod error;
pub mod features;
pub mod graph;
pub mod infer;
pub mod io;
pub mod learn;
pub mod metrics;
pub mod mpn;
pub mod par;
pub mod sim;
pub mod track;

pub use error::{Error, Result};
