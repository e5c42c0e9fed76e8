//! Axis-aligned box arithmetic: intersection-over-union and non-maximum
//! suppression.
//!
//! Boxes are closed rectangles `[x_min, x_max] x [y_min, y_max]` in pixel or
//! normalized image units. Everything here is a pure value-semantic function,
//! safe to call from any number of workers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned bounding box with strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite coordinates and zero or negative
    /// extents.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox {
            x_min,
            y_min,
            x_max,
            y_max,
            reason,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(invalid("coordinates must be finite"));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(invalid("box must have strictly positive area"));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// A detection: a box plus the detector's confidence score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredProposal {
    pub bbox: BBox,
    pub score: f64,
}

impl ScoredProposal {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidProbability(score));
        }
        Ok(Self { bbox, score })
    }
}

/// Intersection-over-union of two boxes. Symmetric, in `[0, 1]`, zero for
/// disjoint boxes and one exactly when the boxes coincide.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Largest IoU between `bbox` and any box in `others`; zero when `others` is
/// empty.
pub fn max_iou(bbox: &BBox, others: &[BBox]) -> f64 {
    others
        .iter()
        .map(|gt| iou(bbox, gt))
        .fold(0.0, f64::max)
}

/// Greedy non-maximum suppression.
///
/// Proposals are sorted by descending score (ties keep input order) and a box
/// is kept only if its IoU with every higher-scored kept box stays below
/// `overlap_threshold`. The result is a subsequence of the score-sorted input.
pub fn nms(proposals: &[ScoredProposal], overlap_threshold: f64) -> Vec<ScoredProposal> {
    assert!(
        overlap_threshold > 0.0 && overlap_threshold <= 1.0,
        "overlap threshold must be in (0, 1]"
    );
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| {
        proposals[b]
            .score
            .partial_cmp(&proposals[a].score)
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut kept: Vec<ScoredProposal> = Vec::new();
    for idx in order {
        let candidate = &proposals[idx];
        let suppressed = kept
            .iter()
            .any(|k| iou(&k.bbox, &candidate.bbox) >= overlap_threshold);
        if !suppressed {
            kept.push(*candidate);
        }
    }
    kept
}
