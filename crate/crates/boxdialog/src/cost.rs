//! Expected episode duration and planners over the verify-then-draw action
//! grammar.
//!
//! A planned dialog verifies some ordered subset of the proposals and falls
//! back to manual drawing if none is accepted. With per-box acceptance
//! probabilities `p_i` (rejection `q_i = 1 - p_i`), the expected duration of
//! verifying boxes `s_1..s_m` before drawing is
//!
//! ```text
//! T = t_V * sum_{l=0}^{m-1} prod_{j<=l} q_j  +  t_D * prod_{j=1}^{m} q_j
//! ```
//!
//! [`threshold_plan`] picks exactly the boxes with `p > t_V / t_D`, which
//! minimizes `T` over every subset length and order; [`exhaustive_optimal_plan`]
//! is the brute-force oracle used to certify that claim.

use crate::annotator::{ActionTimings, QualityLevel};
use crate::error::{Error, Result};
use crate::geometry;
use crate::scene::Scene;

/// Most proposals the exhaustive planner will enumerate over.
pub const EXHAUSTIVE_MAX_PROPOSALS: usize = 8;

/// Per-proposal acceptance probabilities aligned with a scene's proposal list.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceEstimate {
    probs: Vec<f64>,
}

impl AcceptanceEstimate {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        for &p in &probs {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidProbability(p));
            }
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// How a planner orders the boxes it decided to verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanOrdering {
    /// Descending predicted acceptance probability (the provably optimal
    /// order).
    SortedByProb,
    /// Original detector-score order of the proposal list.
    DetectorScore,
}

/// A planned dialog: the ordered proposal indices to verify, then draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// Distinct proposal indices, in verification order.
    pub box_order: Vec<usize>,
    /// Expected episode duration of this plan in seconds.
    pub expected_duration_s: f64,
}

impl Plan {
    pub fn num_verifications(&self) -> usize {
        self.box_order.len()
    }
}

/// Evaluates the closed-form expected episode duration for verifying boxes
/// with the given acceptance probabilities in order, then drawing. An empty
/// list prices the pure-drawing dialog, `t_draw`.
pub fn expected_duration(probs: &[f64], timings: &ActionTimings) -> Result<f64> {
    let mut total = 0.0;
    let mut reject_prefix = 1.0;
    for &p in probs {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        total += reject_prefix * timings.verify_s;
        reject_prefix *= 1.0 - p;
    }
    Ok(total + reject_prefix * timings.draw_s)
}

fn duration_of_order(order: &[usize], probs: &[f64], timings: &ActionTimings) -> f64 {
    let mut total = 0.0;
    let mut reject_prefix = 1.0;
    for &i in order {
        total += reject_prefix * timings.verify_s;
        reject_prefix *= 1.0 - probs[i];
    }
    total + reject_prefix * timings.draw_s
}

/// The probability-threshold planner: verify exactly the boxes whose
/// acceptance probability exceeds `t_verify / t_draw`, then draw.
///
/// Under [`PlanOrdering::SortedByProb`] the returned plan minimizes the
/// expected duration over every subset length and order. Under
/// [`PlanOrdering::DetectorScore`] the same boxes are verified in the
/// original proposal order.
pub fn threshold_plan(
    estimate: &AcceptanceEstimate,
    timings: &ActionTimings,
    ordering: PlanOrdering,
) -> Plan {
    let probs = estimate.probs();
    let threshold = timings.verify_draw_ratio();
    let mut box_order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > threshold).collect();
    if ordering == PlanOrdering::SortedByProb {
        box_order.sort_by(|&a, &b| {
            probs[b]
                .partial_cmp(&probs[a])
                .unwrap()
                .then(a.cmp(&b))
        });
    }
    let expected_duration_s = duration_of_order(&box_order, probs, timings);
    Plan {
        box_order,
        expected_duration_s,
    }
}

struct SearchState<'a> {
    probs: &'a [f64],
    timings: &'a ActionTimings,
    used: Vec<bool>,
    prefix: Vec<usize>,
    best_duration: f64,
    best_order: Vec<usize>,
}

impl SearchState<'_> {
    fn consider_current(&mut self, duration: f64) {
        let better = duration < self.best_duration
            || (duration == self.best_duration
                && (self.prefix.len() < self.best_order.len()
                    || (self.prefix.len() == self.best_order.len()
                        && self.prefix < self.best_order)));
        if better {
            self.best_duration = duration;
            self.best_order = self.prefix.clone();
        }
    }

    // `partial_sum` carries the verification terms of the prefix,
    // `reject_prefix` the product of its rejection probabilities; both are
    // accumulated in the same operation order as `expected_duration`.
    fn search(&mut self, partial_sum: f64, reject_prefix: f64) {
        self.consider_current(partial_sum + reject_prefix * self.timings.draw_s);
        for i in 0..self.probs.len() {
            if self.used[i] {
                continue;
            }
            self.used[i] = true;
            self.prefix.push(i);
            self.search(
                partial_sum + reject_prefix * self.timings.verify_s,
                reject_prefix * (1.0 - self.probs[i]),
            );
            self.prefix.pop();
            self.used[i] = false;
        }
    }
}

/// Exhaustively minimizes the expected duration over every ordered subset of
/// every length. Ties break toward fewer verifications, then lexicographic
/// order. Intended as the certification oracle; capped at
/// [`EXHAUSTIVE_MAX_PROPOSALS`] proposals.
pub fn exhaustive_optimal_plan(probs: &[f64], timings: &ActionTimings) -> Result<Plan> {
    if probs.len() > EXHAUSTIVE_MAX_PROPOSALS {
        return Err(Error::Capacity {
            max: EXHAUSTIVE_MAX_PROPOSALS,
            got: probs.len(),
        });
    }
    for &p in probs {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
    }
    let mut state = SearchState {
        probs,
        timings,
        used: vec![false; probs.len()],
        prefix: Vec::with_capacity(probs.len()),
        best_duration: f64::INFINITY,
        best_order: Vec::new(),
    };
    state.search(0.0, 1.0);
    Ok(Plan {
        box_order: state.best_order,
        expected_duration_s: state.best_duration,
    })
}

/// Clairvoyant per-episode bound: knowing the 1-based position of the first
/// acceptable proposal, the cheapest dialog costs
/// `min(first_acceptable * t_verify, t_draw)`; with no acceptable proposal,
/// drawing is the only success path.
pub fn lower_bound(first_acceptable: Option<usize>, timings: &ActionTimings) -> f64 {
    match first_acceptable {
        Some(k) => (k as f64 * timings.verify_s).min(timings.draw_s),
        None => timings.draw_s,
    }
}

/// Ground-truth acceptance probabilities under the deterministic annotator:
/// an indicator of whether each proposal reaches IoU >= alpha with some
/// ground-truth box. Also the label source for classifier training.
pub fn true_acceptance_probs(scene: &Scene, quality: QualityLevel) -> AcceptanceEstimate {
    let probs = scene
        .proposals
        .iter()
        .map(|p| {
            if geometry::max_iou(&p.bbox, &scene.gt_boxes) >= quality.alpha() {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    AcceptanceEstimate { probs }
}

/// 1-based position of the first acceptable proposal, if any.
pub fn first_acceptable_position(scene: &Scene, quality: QualityLevel) -> Option<usize> {
    scene
        .proposals
        .iter()
        .position(|p| geometry::max_iou(&p.bbox, &scene.gt_boxes) >= quality.alpha())
        .map(|i| i + 1)
}
