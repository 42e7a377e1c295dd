//! Frame-to-video semantic prediction for video anomaly detection.
//!
//! The pipeline predicts a short semantic future video from a single
//! semantic frame plus initial motion cues, scores test frames by
//! prediction error, and evaluates with frame-level ROC/AUC. Everything
//! runs on the CPU with hand-rolled forward/backward passes; no external
//! ML framework is required.

pub mod config;
pub mod dataset;
pub mod evaluator;
pub mod flow;
pub mod frame;
pub mod losses;
pub mod model;
pub mod nn;
pub mod plot;
pub mod savgol;
pub mod scorer;
pub mod synth;
pub mod trainer;

pub use flow::{compute_direction_map, flow_to_polar, DirectionMap, FlowField};
pub use frame::{colorize, ClassPalette, PaletteEntry, SemanticFrame, VideoTensor};
