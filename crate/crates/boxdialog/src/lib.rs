//! Desk-scale simulator and policy library for cost-optimal bounding-box
//! annotation dialogs.
//!
//! An annotation dialog produces one bounding box for one image-class pair
//! out of two actions: *verification* (show a detector proposal, the
//! annotator accepts iff it reaches IoU >= alpha with some ground-truth box)
//! and *manual drawing* (always succeeds, costs more). This crate plans and
//! executes such dialogs:
//!
//! - [`geometry`]: box arithmetic, IoU, non-maximum suppression.
//! - [`scene`]: synthetic tasks from a surrogate detector, direct-probability
//!   test scenes, detection-dump I/O.
//! - [`annotator`]: the simulated human and the action time costs.
//! - [`cost`]: closed-form expected episode duration, the probability-
//!   threshold planner, the exhaustive oracle, and the clairvoyant bound.
//! - [`certify`]: sweeps that certify the planner against the oracle.
//!
//! See the guide under `book/` for a narrative walkthrough.

pub mod annotator;
pub mod certify;
pub mod classifier;
pub mod cost;
pub mod episode;
pub mod error;
pub mod features;
pub mod geometry;
pub mod mlp;
pub mod report;
pub mod retrain;
pub mod rl;
pub mod scene;

pub use annotator::{ActionTimings, QualityLevel};
pub use error::{Error, Result};
pub use geometry::{iou, nms, BBox, ScoredProposal};
pub use scene::{BernoulliScene, DetectorModel, Scene, ScenarioConfig};
