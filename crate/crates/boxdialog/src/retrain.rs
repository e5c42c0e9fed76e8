//! Iterative detector improvement from collected annotations, under three
//! regimes: a pure fast-drawing baseline, horizontal sweeps (one verification
//! per unfinished scene per iteration, with re-localization between sweeps),
//! and vertical batches where the threshold planner is retrained after every
//! completed batch.
//!
//! All regimes walk the same seed-derived permutation of the dataset, so
//! their traces are comparable point for point.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

use crate::annotator::{self, ActionTimings, QualityLevel};
use crate::classifier::{self, ClassifierModel, TrainConfig};
use crate::cost::PlanOrdering;
use crate::episode::{
    derived_seed, mean_and_stderr, run_episode, EpisodeOutcome, Strategy,
};
use crate::error::{Error, Result};
use crate::geometry;
use crate::scene::{realize_proposals, update_detector, DetectorModel, ProposalParams, Scene, SceneLayout};

/// Dataset fractions annotated per retraining batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSchedule {
    fractions: Vec<f64>,
}

impl BatchSchedule {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        if fractions.is_empty() || fractions.iter().any(|&f| f <= 0.0 || !f.is_finite()) {
            return Err(Error::Config("schedule fractions must be positive".into()));
        }
        let total: f64 = fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "schedule fractions sum to {total}, expected 1"
            )));
        }
        Ok(Self { fractions })
    }

    /// Six batches doubling from 3.125% to 50% of the dataset.
    pub fn doubling() -> Self {
        Self {
            fractions: vec![0.03125, 0.03125, 0.0625, 0.125, 0.25, 0.5],
        }
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    /// Integer batch sizes summing to `total` (largest-remainder rounding).
    /// Errors if the dataset is too small to give every batch a scene.
    pub fn batch_sizes(&self, total: usize) -> Result<Vec<usize>> {
        let mut sizes: Vec<usize> = self
            .fractions
            .iter()
            .map(|f| (f * total as f64).floor() as usize)
            .collect();
        let assigned: usize = sizes.iter().sum();
        let mut remainders: Vec<(usize, f64)> = self
            .fractions
            .iter()
            .enumerate()
            .map(|(i, f)| (i, f * total as f64 - sizes[i] as f64))
            .collect();
        remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (i, _) in remainders.iter().take(total - assigned) {
            sizes[*i] += 1;
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!(
                "{total} scenes cannot fill a {}-batch schedule",
                self.fractions.len()
            )));
        }
        Ok(sizes)
    }
}

impl Default for BatchSchedule {
    fn default() -> Self {
        Self::doubling()
    }
}

/// Settings shared by the retraining regimes.
#[derive(Debug, Clone)]
pub struct RetrainConfig {
    pub schedule: BatchSchedule,
    pub quality: QualityLevel,
    pub timings: ActionTimings,
    pub seed: u64,
    pub classifier: TrainConfig,
    /// Verification sweeps before horizontal retraining force-draws the rest.
    pub horizontal_iterations: usize,
    /// Train the planner's classifier on all batches so far instead of only
    /// the latest one.
    pub accumulate_training_batches: bool,
}

impl RetrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            schedule: BatchSchedule::doubling(),
            quality: QualityLevel::high(),
            timings: ActionTimings::extreme_clicking(),
            seed,
            classifier: TrainConfig::new(0.2, seed),
            horizontal_iterations: 5,
            accumulate_training_batches: false,
        }
    }
}

/// Statistics of one batch (or one horizontal phase).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub batch: usize,
    pub n_episodes: usize,
    pub mean_time_s: f64,
    pub stderr_s: f64,
    /// Strength of the detector that proposed this batch's boxes.
    pub detector_strength: f64,
    pub drawn_boxes: usize,
    pub verified_boxes: usize,
    pub mean_iou_verified: Option<f64>,
    /// Fraction of episodes that contained at least one verification.
    pub frac_with_verification: f64,
    pub composition: Vec<(String, usize)>,
}

/// Full record of a retraining run.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrainTrace {
    /// Cumulative (annotation seconds, fraction of boxes collected), one
    /// point per batch after the origin.
    pub curve: Vec<(f64, f64)>,
    pub batches: Vec<BatchStats>,
    pub total_time_s: f64,
    pub total_boxes: usize,
    pub final_strength: f64,
    /// Worst IoU among all produced boxes; the quality floor.
    pub min_produced_iou: f64,
}

fn permuted<'a>(layouts: &'a [SceneLayout], seed: u64) -> Vec<&'a SceneLayout> {
    let mut refs: Vec<&SceneLayout> = layouts.iter().collect();
    refs.shuffle(&mut ChaCha8Rng::seed_from_u64(derived_seed(seed, 0xDA7A)));
    refs
}

fn num_classes_of(layouts: &[SceneLayout]) -> usize {
    layouts.iter().map(|l| l.class_id + 1).max().unwrap_or(1)
}

fn batch_stats_from_outcomes(
    batch: usize,
    outcomes: &[EpisodeOutcome],
    timings: &ActionTimings,
    detector_strength: f64,
) -> BatchStats {
    let times: Vec<f64> = outcomes.iter().map(|o| o.total_time_s).collect();
    let (mean_time_s, stderr_s) = mean_and_stderr(&times);
    let drawn = outcomes.iter().filter(|o| o.ended_with_draw()).count();
    let verified: Vec<&EpisodeOutcome> =
        outcomes.iter().filter(|o| o.accepted_at.is_some()).collect();
    let with_verification = outcomes
        .iter()
        .filter(|o| o.num_verifications() > 0)
        .count();
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    for outcome in outcomes {
        *histogram
            .entry(outcome.composition_label(timings))
            .or_insert(0) += 1;
    }
    BatchStats {
        batch,
        n_episodes: outcomes.len(),
        mean_time_s,
        stderr_s,
        detector_strength,
        drawn_boxes: drawn,
        verified_boxes: verified.len(),
        mean_iou_verified: if verified.is_empty() {
            None
        } else {
            Some(verified.iter().map(|o| o.produced_iou).sum::<f64>() / verified.len() as f64)
        },
        frac_with_verification: with_verification as f64 / outcomes.len() as f64,
        composition: histogram.into_iter().collect(),
    }
}

/// Vertical retraining of the threshold planner: batch 1 is annotated by pure
/// drawing; after each batch the detector is updated on all boxes collected
/// so far and the classifier is retrained on the latest batch, whose
/// proposals came from the previous detector. The refreshed planner then
/// annotates the next batch with the updated detector's proposals.
pub fn run_vertical_retraining(
    layouts: &[SceneLayout],
    detector: &DetectorModel,
    params: &ProposalParams,
    config: &RetrainConfig,
) -> Result<RetrainTrace> {
    let order = permuted(layouts, config.seed);
    let sizes = config.schedule.batch_sizes(order.len())?;
    let num_classes = num_classes_of(layouts);

    let mut detector = detector.clone();
    let mut model: Option<ClassifierModel> = None;
    let mut training_pool: Vec<Scene> = Vec::new();

    let mut curve = vec![(0.0, 0.0)];
    let mut batches = Vec::new();
    let mut cum_time = 0.0;
    let mut boxes = 0usize;
    let mut min_produced_iou = f64::INFINITY;

    let mut offset = 0;
    for (tau, &size) in sizes.iter().enumerate() {
        let batch_layouts = &order[offset..offset + size];
        offset += size;

        let scenes: Vec<Scene> = batch_layouts
            .par_iter()
            .map(|layout| realize_proposals(layout, &detector, params))
            .collect();

        let strategy = match &model {
            None => Strategy::Draw,
            Some(model) => Strategy::ProbPlanner {
                model: model.clone(),
                ordering: PlanOrdering::DetectorScore,
                num_classes,
            },
        };
        let outcomes: Vec<EpisodeOutcome> = scenes
            .par_iter()
            .map(|scene| run_episode(&strategy, scene, config.quality, &config.timings))
            .collect::<Result<_>>()?;

        let stats =
            batch_stats_from_outcomes(tau + 1, &outcomes, &config.timings, detector.strength);
        cum_time += outcomes.iter().map(|o| o.total_time_s).sum::<f64>();
        boxes += outcomes.len();
        for outcome in &outcomes {
            min_produced_iou = min_produced_iou.min(outcome.produced_iou);
        }
        curve.push((cum_time, boxes as f64 / order.len() as f64));
        batches.push(stats);

        // Retrain: classifier on the latest batch (proposals from the
        // detector that annotated it), detector on all boxes so far.
        if config.accumulate_training_batches {
            training_pool.extend(scenes);
        } else {
            training_pool = scenes;
        }
        if tau + 1 < sizes.len() {
            let data =
                classifier::build_training_set(&training_pool, config.quality, num_classes)?;
            let mut train_cfg = config.classifier.clone();
            train_cfg.seed = derived_seed(config.seed, 1 + tau as u64);
            model = Some(classifier::train(&data, &train_cfg)?);
            detector = update_detector(&detector, size);
        } else {
            detector = update_detector(&detector, size);
        }
    }

    Ok(RetrainTrace {
        curve,
        batches,
        total_time_s: cum_time,
        total_boxes: boxes,
        final_strength: detector.strength,
        min_produced_iou,
    })
}

/// Horizontal retraining: each sweep verifies the top proposal of every
/// unfinished scene, the detector is retrained on the accepted boxes, and
/// unfinished scenes are re-localized with the stronger detector. After the
/// last sweep the remaining scenes are completed by drawing so every regime
/// collects the same boxes.
pub fn run_horizontal_retraining(
    layouts: &[SceneLayout],
    detector: &DetectorModel,
    params: &ProposalParams,
    config: &RetrainConfig,
) -> Result<RetrainTrace> {
    if config.horizontal_iterations == 0 {
        return Err(Error::Config("need at least one horizontal sweep".into()));
    }
    let order = permuted(layouts, config.seed);
    let total = order.len();
    if total == 0 {
        return Err(Error::Config("no scenes to annotate".into()));
    }

    let mut detector = detector.clone();
    let mut unfinished: Vec<usize> = (0..total).collect();
    let mut verifications = vec![0usize; total];

    let mut curve = vec![(0.0, 0.0)];
    let mut batches = Vec::new();
    let mut cum_time = 0.0;
    let mut boxes = 0usize;
    let mut min_produced_iou = f64::INFINITY;

    for sweep in 1..=config.horizontal_iterations {
        if unfinished.is_empty() {
            break;
        }
        let strength_now = detector.strength;
        let scenes: Vec<(usize, Scene)> = unfinished
            .par_iter()
            .map(|&i| (i, realize_proposals(order[i], &detector, params)))
            .collect();

        let mut outcomes = Vec::new();
        let mut still_unfinished = Vec::new();
        let mut accepted = 0usize;
        for (i, scene) in &scenes {
            if scene.proposals.is_empty() {
                still_unfinished.push(*i);
                continue;
            }
            let top = &scene.proposals[0];
            let verdict =
                annotator::verify(&top.bbox, scene, config.quality, &config.timings);
            verifications[*i] += 1;
            cum_time += verdict.elapsed_s;
            if verdict.accepted {
                accepted += 1;
                let produced_iou = geometry::max_iou(&top.bbox, &scene.gt_boxes);
                min_produced_iou = min_produced_iou.min(produced_iou);
                outcomes.push(EpisodeOutcome {
                    actions: vec![
                        crate::episode::ActionRecord::Verify(0);
                        verifications[*i]
                    ],
                    total_time_s: verifications[*i] as f64 * config.timings.verify_s,
                    produced_box: top.bbox,
                    accepted_at: Some(0),
                    produced_iou,
                });
            } else {
                still_unfinished.push(*i);
            }
        }
        boxes += accepted;
        unfinished = still_unfinished;
        curve.push((cum_time, boxes as f64 / total as f64));
        let mut stats =
            batch_stats_from_outcomes(sweep, &outcomes, &config.timings, strength_now);
        stats.n_episodes = scenes.len();
        stats.mean_time_s = config.timings.verify_s;
        stats.stderr_s = 0.0;
        stats.frac_with_verification = 1.0;
        batches.push(stats);

        detector = update_detector(&detector, accepted);
    }

    // Termination guarantee: whatever survived every sweep is drawn.
    if !unfinished.is_empty() {
        min_produced_iou = min_produced_iou.min(1.0);
        let outcomes: Vec<EpisodeOutcome> = unfinished
            .iter()
            .map(|&i| {
                let mut actions = vec![
                    crate::episode::ActionRecord::Verify(0);
                    verifications[i]
                ];
                actions.push(crate::episode::ActionRecord::Draw);
                let gt = order[i].gt_boxes[0];
                EpisodeOutcome {
                    total_time_s: verifications[i] as f64 * config.timings.verify_s
                        + config.timings.draw_s,
                    actions,
                    produced_box: gt,
                    accepted_at: None,
                    produced_iou: 1.0,
                }
            })
            .collect();
        // Only the drawing cost is new; the verifications were paid above.
        cum_time += unfinished.len() as f64 * config.timings.draw_s;
        boxes += unfinished.len();
        curve.push((cum_time, boxes as f64 / total as f64));
        let mut stats = batch_stats_from_outcomes(
            config.horizontal_iterations + 1,
            &outcomes,
            &config.timings,
            detector.strength,
        );
        stats.mean_time_s = config.timings.draw_s;
        stats.stderr_s = 0.0;
        batches.push(stats);
    }

    Ok(RetrainTrace {
        curve,
        batches,
        total_time_s: cum_time,
        total_boxes: boxes,
        final_strength: detector.strength,
        min_produced_iou,
    })
}

/// The constant baseline: every scene annotated by drawing, reported on the
/// same batch schedule for comparison.
pub fn run_drawing_baseline(
    layouts: &[SceneLayout],
    config: &RetrainConfig,
) -> Result<RetrainTrace> {
    let order = permuted(layouts, config.seed);
    let sizes = config.schedule.batch_sizes(order.len())?;

    let mut curve = vec![(0.0, 0.0)];
    let mut batches = Vec::new();
    let mut cum_time = 0.0;
    let mut boxes = 0usize;

    let mut offset = 0;
    for (tau, &size) in sizes.iter().enumerate() {
        let outcomes: Vec<EpisodeOutcome> = order[offset..offset + size]
            .iter()
            .map(|layout| EpisodeOutcome {
                actions: vec![crate::episode::ActionRecord::Draw],
                total_time_s: config.timings.draw_s,
                produced_box: layout.gt_boxes[0],
                accepted_at: None,
                produced_iou: 1.0,
            })
            .collect();
        offset += size;
        cum_time += outcomes.len() as f64 * config.timings.draw_s;
        boxes += outcomes.len();
        curve.push((cum_time, boxes as f64 / order.len() as f64));
        batches.push(batch_stats_from_outcomes(
            tau + 1,
            &outcomes,
            &config.timings,
            f64::NAN,
        ));
    }

    Ok(RetrainTrace {
        curve,
        batches,
        total_time_s: cum_time,
        total_boxes: boxes,
        final_strength: f64::NAN,
        min_produced_iou: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_layouts, ScenarioConfig};
    use approx::assert_relative_eq;

    fn layouts(n: usize, seed: u64) -> (Vec<SceneLayout>, ProposalParams) {
        let config = ScenarioConfig::new(n, 2, seed);
        (generate_layouts(&config).unwrap(), config.proposals)
    }

    #[test]
    fn schedule_validation_and_sizes() {
        assert!(BatchSchedule::new(vec![0.5, 0.4]).is_err());
        assert!(BatchSchedule::new(vec![0.5, -0.5, 1.0]).is_err());
        let schedule = BatchSchedule::doubling();
        let sizes = schedule.batch_sizes(4000).unwrap();
        assert_eq!(sizes, vec![125, 125, 250, 500, 1000, 2000]);
        assert_eq!(sizes.iter().sum::<usize>(), 4000);
        // Too small to give every batch a scene.
        assert!(schedule.batch_sizes(10).is_err());
    }

    #[test]
    fn drawing_baseline_is_a_straight_line() {
        let (layouts, _) = layouts(320, 1);
        let config = RetrainConfig::new(5);
        let trace = run_drawing_baseline(&layouts, &config).unwrap();
        assert_eq!(trace.total_boxes, 320);
        assert_relative_eq!(trace.total_time_s, 320.0 * 7.0, max_relative = 1e-12);
        for (time, frac) in &trace.curve[1..] {
            // Slope 1/t_draw boxes per second.
            assert_relative_eq!(frac * 320.0 * 7.0, *time, max_relative = 1e-9);
        }
        for stats in &trace.batches {
            assert_eq!(stats.mean_time_s, 7.0);
            assert_eq!(stats.frac_with_verification, 0.0);
            assert_eq!(stats.composition.len(), 1);
            assert_eq!(stats.composition[0].0, "X");
        }
    }

    #[test]
    fn horizontal_with_perfect_detector_finishes_in_one_sweep() {
        let (layouts, params) = layouts(64, 3);
        let mut detector = DetectorModel::new(1.0, 2).unwrap();
        detector.localization_noise = 0.0;
        let config = RetrainConfig::new(7);
        let trace = run_horizontal_retraining(&layouts, &detector, &params, &config).unwrap();
        assert_eq!(trace.total_boxes, 64);
        assert_relative_eq!(trace.total_time_s, 64.0 * 1.8, max_relative = 1e-12);
        assert_eq!(trace.batches.len(), 1);
    }

    #[test]
    fn horizontal_with_hopeless_detector_draws_everything() {
        let (layouts, params) = layouts(48, 4);
        let detector = DetectorModel::new(0.0, 2).unwrap();
        let mut config = RetrainConfig::new(9);
        config.horizontal_iterations = 1;
        // IoU of exactly 1 never happens under jitter, so every verification
        // fails and every scene is drawn.
        config.quality = QualityLevel::new(1.0).unwrap();
        let trace = run_horizontal_retraining(&layouts, &detector, &params, &config).unwrap();
        assert_relative_eq!(
            trace.total_time_s,
            48.0 * (1.8 + 7.0),
            max_relative = 1e-12
        );
        assert_eq!(trace.total_boxes, 48);
        let last = trace.batches.last().unwrap();
        assert_eq!(last.drawn_boxes, 48);
    }

    #[test]
    fn vertical_first_batch_is_pure_drawing() {
        let (layouts, params) = layouts(96, 5);
        let detector = DetectorModel::new(0.2, 2).unwrap();
        let mut config = RetrainConfig::new(11);
        config.schedule = BatchSchedule::new(vec![0.25, 0.25, 0.5]).unwrap();
        config.classifier.max_epochs = 30;
        let trace = run_vertical_retraining(&layouts, &detector, &params, &config).unwrap();

        assert_eq!(trace.batches[0].mean_time_s, 7.0);
        assert_eq!(trace.batches[0].frac_with_verification, 0.0);
        assert_eq!(trace.total_boxes, 96);

        // Detector strength strictly increases across batches.
        for pair in trace.batches.windows(2) {
            assert!(pair[1].detector_strength > pair[0].detector_strength);
        }

        // Cumulative curve is non-decreasing in both axes and ends complete.
        for pair in trace.curve.windows(2) {
            assert!(pair[1].0 >= pair[0].0 && pair[1].1 >= pair[0].1);
        }
        assert_relative_eq!(trace.curve.last().unwrap().1, 1.0, max_relative = 1e-12);

        // Quality floor: verified boxes pass the bar by construction.
        for stats in &trace.batches {
            if let Some(iou) = stats.mean_iou_verified {
                assert!(iou >= config.quality.alpha());
            }
        }
    }

    #[test]
    fn regimes_share_the_permutation_and_complete_the_dataset() {
        let (layouts, params) = layouts(80, 6);
        let detector = DetectorModel::new(0.3, 2).unwrap();
        let mut config = RetrainConfig::new(13);
        config.schedule = BatchSchedule::new(vec![0.25, 0.25, 0.5]).unwrap();
        config.classifier.max_epochs = 20;
        config.horizontal_iterations = 3;

        let vertical =
            run_vertical_retraining(&layouts, &detector, &params, &config).unwrap();
        let horizontal =
            run_horizontal_retraining(&layouts, &detector, &params, &config).unwrap();
        let drawing = run_drawing_baseline(&layouts, &config).unwrap();
        assert_eq!(vertical.total_boxes, 80);
        assert_eq!(horizontal.total_boxes, 80);
        assert_eq!(drawing.total_boxes, 80);

        // Composition counts cover every episode exactly once.
        for trace in [&vertical, &horizontal, &drawing] {
            let counted: usize = trace
                .batches
                .iter()
                .flat_map(|b| b.composition.iter().map(|(_, c)| *c))
                .sum();
            assert_eq!(counted, 80);
        }
    }
}
