//! Multi-person gaze target detection with explicit head-target association.
//!
//! Each scene is described by up to `N` proposals, every proposal carrying a
//! head heatmap, a gaze heatmap, a head-to-target connection map and an
//! out-of-frame flag. Training matches proposals to ground truth with the
//! Hungarian algorithm and regresses Gaussian targets; evaluation reports AUC,
//! gaze distances, instance mAP and out-of-frame AP.

pub mod cli;
pub mod data;
pub mod error;
pub mod geometry;
pub mod gtgen;
pub mod harness;
pub mod heatmap;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod postprocess;
pub mod viz;

pub use error::{Error, Result};
pub use geometry::{BBox, Point};
pub use gtgen::{Annotation, GroundTruthMaps, GtConfig};
pub use heatmap::Heatmap;
