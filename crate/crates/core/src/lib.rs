//! Multi-camera hand annotation and egocentric hand-object interaction (HOI)
//! detection toolkit.
//!
//! The crate covers the full desk-scale pipeline: pinhole camera geometry and
//! cube-relative calibration, Levenberg-Marquardt triangulation of hand joints
//! from multi-view 2D detections, label transfer across paired (object /
//! object-removed) captures, heatmap encoding/decoding, green-screen
//! augmentation, cue fusion into an interaction probability, frame-timeline
//! smoothing and segment extraction, and the evaluation metrics for all of it.
//! A deterministic synthetic camera rig (`synth`) provides ground truth for
//! the geometric paths.

pub use nalgebra;

pub mod augment;
pub mod calib;
pub mod camera;
pub mod fusion;
pub mod heatmap;
pub mod lm;
pub mod locator;
pub mod metrics;
pub mod pose3d;
pub mod raster;
pub mod rng;
pub mod synth;
pub mod timeline;

pub use camera::{CameraModel, GeometryError, Intrinsics, Pose6D};
pub use heatmap::HeatmapStack;
pub use pose3d::{Detection2D, Joints3D};
pub use raster::{ImageRaster, MaskRaster};
pub use timeline::{HoiTimeline, Segment};
