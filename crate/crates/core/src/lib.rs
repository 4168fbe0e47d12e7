//! Chain-ordered dense object counting.
//!
//! Everything here is geometry and arithmetic over detections: optimal
//! matching with a focal cost, the chain (neighboring) loss and its
//! gradients, duplicate removal along the dominant axis, two-pass
//! divide-and-conquer counting over an injected [`partition::Counter`], and
//! the counting/localization metric suite.

pub mod assignment;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod partition;
pub mod postprocess;
pub mod refine;
pub mod report;
pub mod synth;

pub use assignment::{
    brute_force_assignment, build_value_matrix, focal_match_cost, hungarian, CostMatrix,
    FocalParams, MatchResult,
};
pub use error::{Error, Result};
pub use geometry::{
    dominant_orientation, sort_along, Axis, BBox, Detection, ImageRecord, Point2D, Rect,
};
pub use losses::{ChainInstance, LossBreakdown, LossWeights};
pub use metrics::{CountStats, GameStats, LocalizationReport};
pub use partition::{Counter, PartitionConfig};
pub use postprocess::DedupConfig;
pub use refine::{RefineConfig, RefineTrace};
pub use report::MetricsReport;
