//! The simulated human annotator: deterministic box verification against
//! ground truth at a quality level, and manual drawing that returns a
//! ground-truth box, each with its fixed time cost.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, BBox};
use crate::scene::{BernoulliScene, Scene};

/// Required box quality: a verification succeeds iff the proposal reaches
/// IoU >= alpha with some ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityLevel {
    alpha: f64,
}

impl QualityLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 || alpha > 1.0 {
            return Err(Error::Config(format!("quality alpha {alpha} outside (0, 1]")));
        }
        Ok(Self { alpha })
    }

    /// The stricter of the two canonical experiment levels.
    pub fn high() -> Self {
        Self { alpha: 0.7 }
    }

    pub fn low() -> Self {
        Self { alpha: 0.5 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Time costs of the two annotator actions, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionTimings {
    pub verify_s: f64,
    pub draw_s: f64,
}

impl ActionTimings {
    pub fn new(verify_s: f64, draw_s: f64) -> Result<Self> {
        if !(verify_s.is_finite() && verify_s > 0.0 && draw_s.is_finite() && draw_s > 0.0) {
            return Err(Error::Config(format!(
                "timings ({verify_s}, {draw_s}) must be strictly positive"
            )));
        }
        Ok(Self { verify_s, draw_s })
    }

    /// Verification plus the classic drawing interface (25.5 s per box).
    pub fn classic_drawing() -> Self {
        Self {
            verify_s: 1.8,
            draw_s: 25.5,
        }
    }

    /// Verification plus the fast extreme-clicking interface (7 s per box).
    pub fn extreme_clicking() -> Self {
        Self {
            verify_s: 1.8,
            draw_s: 7.0,
        }
    }

    /// Ratio `t_verify / t_draw`, the acceptance-probability threshold above
    /// which verifying a box beats drawing outright.
    pub fn verify_draw_ratio(&self) -> f64 {
        self.verify_s / self.draw_s
    }

    /// Letter used for drawing actions in composition histograms: `M` for the
    /// classic interface, `X` for extreme clicking, `D` otherwise.
    pub fn draw_letter(&self) -> char {
        if self.draw_s == 25.5 {
            'M'
        } else if self.draw_s == 7.0 {
            'X'
        } else {
            'D'
        }
    }
}

/// Outcome of a single verification question.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub accepted: bool,
    pub elapsed_s: f64,
}

/// Outcome of a drawing request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drawn {
    pub bbox: BBox,
    pub elapsed_s: f64,
}

/// Deterministic verification: accepts iff the proposal reaches IoU >= alpha
/// with some ground-truth box. Always costs `verify_s`.
pub fn verify(
    proposal: &BBox,
    scene: &Scene,
    quality: QualityLevel,
    timings: &ActionTimings,
) -> Verdict {
    let accepted = geometry::max_iou(proposal, &scene.gt_boxes) >= quality.alpha();
    Verdict {
        accepted,
        elapsed_s: timings.verify_s,
    }
}

/// Stochastic verification for direct-probability scenes: accepts with the
/// stored probability of the indexed proposal.
pub fn verify_bernoulli(
    scene: &BernoulliScene,
    index: usize,
    rng: &mut impl Rng,
    timings: &ActionTimings,
) -> Result<Verdict> {
    let p = *scene
        .acceptance_probs
        .get(index)
        .ok_or(Error::IndexOutOfRange {
            index,
            len: scene.acceptance_probs.len(),
        })?;
    let accepted = rng.random::<f64>() < p;
    Ok(Verdict {
        accepted,
        elapsed_s: timings.verify_s,
    })
}

/// Manual drawing: returns the first ground-truth box and always succeeds.
/// Costs `draw_s`.
pub fn draw(scene: &Scene, timings: &ActionTimings) -> Drawn {
    Drawn {
        bbox: scene.gt_boxes[0],
        elapsed_s: timings.draw_s,
    }
}
