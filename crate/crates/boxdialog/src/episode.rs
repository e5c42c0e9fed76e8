//! Executes annotation strategies against scenes and aggregates the
//! outcomes: per-episode action traces, batch statistics with standard
//! errors, composition histograms, and k-fold evaluation with per-fold model
//! training.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::annotator::{self, ActionTimings, QualityLevel};
use crate::classifier::{self, ClassifierModel, TrainConfig};
use crate::cost::{
    first_acceptable_position, threshold_plan, PlanOrdering,
};
use crate::error::{Error, Result};
use crate::geometry::{self, BBox};
use crate::rl::{self, QNetwork, RlTrainConfig};
use crate::scene::{num_classes_in, BernoulliScene, Scene};

/// An executable annotation strategy, trained models included.
#[derive(Debug, Clone)]
pub enum Strategy {
    /// Always draw.
    Draw,
    /// Verify the top `m` proposals in score order, then draw.
    FixedSeries(usize),
    /// Verify every proposal, then draw.
    VerifyAll,
    /// Verify the boxes whose predicted acceptance probability clears
    /// `t_verify / t_draw`.
    ProbPlanner {
        model: ClassifierModel,
        ordering: PlanOrdering,
        num_classes: usize,
    },
    /// Greedy rollout of a trained Q-network.
    QPolicy { qnet: QNetwork },
    /// Clairvoyant bound: knows the first acceptable proposal position.
    Clairvoyant,
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Draw => "D".into(),
            Strategy::FixedSeries(m) => format!("V{m}D"),
            Strategy::VerifyAll => "V*D".into(),
            Strategy::ProbPlanner { .. } => "prob-planner".into(),
            Strategy::QPolicy { .. } => "q-policy".into(),
            Strategy::Clairvoyant => "lower-bound".into(),
        }
    }
}

/// A strategy request without trained models; [`kfold_evaluate`] instantiates
/// it per fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategySpec {
    Draw,
    FixedSeries(usize),
    VerifyAll,
    ProbPlanner { ordering: PlanOrdering },
    QPolicy,
    Clairvoyant,
}

impl StrategySpec {
    pub fn label(&self) -> String {
        match self {
            StrategySpec::Draw => "D".into(),
            StrategySpec::FixedSeries(m) => format!("V{m}D"),
            StrategySpec::VerifyAll => "V*D".into(),
            StrategySpec::ProbPlanner { .. } => "prob-planner".into(),
            StrategySpec::QPolicy => "q-policy".into(),
            StrategySpec::Clairvoyant => "lower-bound".into(),
        }
    }

    pub fn needs_classifier(&self) -> bool {
        matches!(self, StrategySpec::ProbPlanner { .. })
    }

    pub fn needs_qnetwork(&self) -> bool {
        matches!(self, StrategySpec::QPolicy)
    }
}

/// One executed action: a verification of a proposal index, or a drawing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionRecord {
    Verify(usize),
    Draw,
}

/// The executed dialog for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub actions: Vec<ActionRecord>,
    pub total_time_s: f64,
    pub produced_box: BBox,
    /// Proposal index whose verification succeeded, if any.
    pub accepted_at: Option<usize>,
    /// IoU of the produced box against its best ground-truth match.
    pub produced_iou: f64,
}

impl EpisodeOutcome {
    pub fn num_verifications(&self) -> usize {
        self.actions
            .iter()
            .filter(|a| matches!(a, ActionRecord::Verify(_)))
            .count()
    }

    pub fn ended_with_draw(&self) -> bool {
        matches!(self.actions.last(), Some(ActionRecord::Draw))
    }

    /// Composition label, e.g. `VVX` for two rejections then a fast draw.
    pub fn composition_label(&self, timings: &ActionTimings) -> String {
        let mut label = String::new();
        for action in &self.actions {
            match action {
                ActionRecord::Verify(_) => label.push('V'),
                ActionRecord::Draw => label.push(timings.draw_letter()),
            }
        }
        label
    }
}

fn finish_with_draw(
    mut actions: Vec<ActionRecord>,
    mut elapsed: f64,
    scene: &Scene,
    timings: &ActionTimings,
) -> EpisodeOutcome {
    let drawn = annotator::draw(scene, timings);
    actions.push(ActionRecord::Draw);
    elapsed += drawn.elapsed_s;
    EpisodeOutcome {
        actions,
        total_time_s: elapsed,
        produced_box: drawn.bbox,
        accepted_at: None,
        produced_iou: geometry::max_iou(&drawn.bbox, &scene.gt_boxes),
    }
}

fn run_verification_series(
    order: &[usize],
    scene: &Scene,
    quality: QualityLevel,
    timings: &ActionTimings,
) -> EpisodeOutcome {
    let mut actions = Vec::new();
    let mut elapsed = 0.0;
    for &index in order {
        let proposal = &scene.proposals[index];
        let verdict = annotator::verify(&proposal.bbox, scene, quality, timings);
        actions.push(ActionRecord::Verify(index));
        elapsed += verdict.elapsed_s;
        if verdict.accepted {
            return EpisodeOutcome {
                actions,
                total_time_s: elapsed,
                produced_box: proposal.bbox,
                accepted_at: Some(index),
                produced_iou: geometry::max_iou(&proposal.bbox, &scene.gt_boxes),
            };
        }
    }
    finish_with_draw(actions, elapsed, scene, timings)
}

/// Executes one strategy on one scene. Deterministic: the simulated annotator
/// answers from ground truth and every strategy is a pure function of the
/// scene.
pub fn run_episode(
    strategy: &Strategy,
    scene: &Scene,
    quality: QualityLevel,
    timings: &ActionTimings,
) -> Result<EpisodeOutcome> {
    let n = scene.proposals.len();
    Ok(match strategy {
        Strategy::Draw => finish_with_draw(Vec::new(), 0.0, scene, timings),
        Strategy::FixedSeries(m) => {
            let order: Vec<usize> = (0..n.min(*m)).collect();
            run_verification_series(&order, scene, quality, timings)
        }
        Strategy::VerifyAll => {
            let order: Vec<usize> = (0..n).collect();
            run_verification_series(&order, scene, quality, timings)
        }
        Strategy::ProbPlanner {
            model,
            ordering,
            num_classes,
        } => {
            let estimate = model.estimate_scene(scene, *num_classes)?;
            let plan = threshold_plan(&estimate, timings, *ordering);
            run_verification_series(&plan.box_order, scene, quality, timings)
        }
        Strategy::QPolicy { qnet } => rl::greedy_rollout(qnet, scene, quality, timings)?,
        Strategy::Clairvoyant => match first_acceptable_position(scene, quality) {
            Some(k) if k as f64 * timings.verify_s <= timings.draw_s => {
                let order: Vec<usize> = (0..k).collect();
                run_verification_series(&order, scene, quality, timings)
            }
            _ => finish_with_draw(Vec::new(), 0.0, scene, timings),
        },
    })
}

/// One stochastic dialog over a direct-probability scene: verify the given
/// proposal indices in order, draw if all reject. Returns the elapsed time
/// and whether the episode ended with a draw.
pub fn run_bernoulli_episode(
    scene: &BernoulliScene,
    box_order: &[usize],
    timings: &ActionTimings,
    rng: &mut impl Rng,
) -> Result<(f64, bool)> {
    let mut elapsed = 0.0;
    for &index in box_order {
        let verdict = annotator::verify_bernoulli(scene, index, rng, timings)?;
        elapsed += verdict.elapsed_s;
        if verdict.accepted {
            return Ok((elapsed, false));
        }
    }
    Ok((elapsed + timings.draw_s, true))
}

/// Aggregate statistics of one strategy over one batch of scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub strategy: String,
    pub fold: usize,
    pub n_episodes: usize,
    pub mean_time_s: f64,
    /// Standard error of the mean, `s / sqrt(N)`.
    pub stderr_s: f64,
    pub drawn_boxes: usize,
    pub verified_boxes: usize,
    pub mean_iou_verified: Option<f64>,
    /// Action-sequence histogram, label -> episode count, sorted by label.
    pub composition: Vec<(String, usize)>,
}

impl RunReport {
    pub fn frac_drawn(&self) -> f64 {
        self.drawn_boxes as f64 / self.n_episodes as f64
    }
}

pub(crate) fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub(crate) fn summarize_outcomes(
    outcomes: &[EpisodeOutcome],
    timings: &ActionTimings,
    strategy: String,
    fold: usize,
) -> RunReport {
    let times: Vec<f64> = outcomes.iter().map(|o| o.total_time_s).collect();
    let (mean_time_s, stderr_s) = mean_and_stderr(&times);
    let drawn_boxes = outcomes.iter().filter(|o| o.ended_with_draw()).count();
    let verified: Vec<&EpisodeOutcome> =
        outcomes.iter().filter(|o| o.accepted_at.is_some()).collect();
    let mean_iou_verified = if verified.is_empty() {
        None
    } else {
        Some(verified.iter().map(|o| o.produced_iou).sum::<f64>() / verified.len() as f64)
    };
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    for outcome in outcomes {
        *histogram.entry(outcome.composition_label(timings)).or_insert(0) += 1;
    }
    RunReport {
        strategy,
        fold,
        n_episodes: outcomes.len(),
        mean_time_s,
        stderr_s,
        drawn_boxes,
        verified_boxes: verified.len(),
        mean_iou_verified,
        composition: histogram.into_iter().collect(),
    }
}

/// Runs a strategy over a batch of scenes. The scene order is a seed-derived
/// permutation so every strategy sees the same fixed random order; episodes
/// execute in parallel with order-independent results.
pub fn run_batch(
    strategy: &Strategy,
    scenes: &[Scene],
    quality: QualityLevel,
    timings: &ActionTimings,
    seed: u64,
) -> Result<RunReport> {
    if scenes.is_empty() {
        return Err(Error::Config("cannot run a batch over no scenes".into()));
    }
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let outcomes: Vec<EpisodeOutcome> = order
        .par_iter()
        .map(|&i| run_episode(strategy, &scenes[i], quality, timings))
        .collect::<Result<_>>()?;
    Ok(summarize_outcomes(&outcomes, timings, strategy.label(), 0))
}

/// K-fold evaluation settings: fold count, base seed, and training
/// configurations for the models that adaptive strategies need.
#[derive(Debug, Clone)]
pub struct KfoldConfig {
    pub folds: usize,
    pub seed: u64,
    pub classifier: TrainConfig,
    pub rl: RlTrainConfig,
}

impl KfoldConfig {
    pub fn new(folds: usize, seed: u64) -> Self {
        Self {
            folds,
            seed,
            classifier: TrainConfig::new(0.2, seed),
            rl: RlTrainConfig::new(seed),
        }
    }
}

pub(crate) fn derived_seed(base: u64, tag: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tag)
}

/// Cross-validated evaluation: partitions the scenes into folds, trains the
/// classifier and Q-network on each training split as needed, and evaluates
/// every requested strategy on the held-out split. Returns one report per
/// (fold, strategy), fold-major.
pub fn kfold_evaluate(
    scenes: &[Scene],
    specs: &[StrategySpec],
    quality: QualityLevel,
    timings: &ActionTimings,
    config: &KfoldConfig,
) -> Result<Vec<RunReport>> {
    if config.folds < 2 {
        return Err(Error::Config("need at least 2 folds".into()));
    }
    if scenes.len() < config.folds {
        return Err(Error::Config(format!(
            "{} scenes cannot fill {} folds",
            scenes.len(),
            config.folds
        )));
    }
    let num_classes = num_classes_in(scenes);
    let mut permuted: Vec<usize> = (0..scenes.len()).collect();
    permuted.shuffle(&mut ChaCha8Rng::seed_from_u64(derived_seed(config.seed, 0)));

    let needs_classifier = specs.iter().any(StrategySpec::needs_classifier);
    let needs_qnetwork = specs.iter().any(StrategySpec::needs_qnetwork);

    let mut reports = Vec::with_capacity(config.folds * specs.len());
    for fold in 0..config.folds {
        let eval_idx: Vec<usize> = permuted
            .iter()
            .enumerate()
            .filter(|(pos, _)| pos % config.folds == fold)
            .map(|(_, &i)| i)
            .collect();
        let train_scenes: Vec<Scene> = permuted
            .iter()
            .enumerate()
            .filter(|(pos, _)| pos % config.folds != fold)
            .map(|(_, &i)| scenes[i].clone())
            .collect();
        let eval_scenes: Vec<Scene> = eval_idx.iter().map(|&i| scenes[i].clone()).collect();

        let model = if needs_classifier {
            let data = classifier::build_training_set(&train_scenes, quality, num_classes)?;
            let mut cfg = config.classifier.clone();
            cfg.seed = derived_seed(config.seed, 1 + fold as u64);
            Some(classifier::train(&data, &cfg)?)
        } else {
            None
        };
        let qnet = if needs_qnetwork {
            let mut cfg = config.rl.clone();
            cfg.seed = derived_seed(config.seed, 101 + fold as u64);
            Some(rl::train_agent(&train_scenes, num_classes, quality, timings, &cfg)?)
        } else {
            None
        };

        let batch_seed = derived_seed(config.seed, 201 + fold as u64);
        for spec in specs {
            let strategy = match spec {
                StrategySpec::Draw => Strategy::Draw,
                StrategySpec::FixedSeries(m) => Strategy::FixedSeries(*m),
                StrategySpec::VerifyAll => Strategy::VerifyAll,
                StrategySpec::ProbPlanner { ordering } => Strategy::ProbPlanner {
                    model: model.clone().expect("classifier trained for this spec"),
                    ordering: *ordering,
                    num_classes,
                },
                StrategySpec::QPolicy => Strategy::QPolicy {
                    qnet: qnet.clone().expect("q-network trained for this spec"),
                },
                StrategySpec::Clairvoyant => Strategy::Clairvoyant,
            };
            let mut report = run_batch(&strategy, &eval_scenes, quality, timings, batch_seed)?;
            report.fold = fold;
            reports.push(report);
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScoredProposal;
    use crate::scene::{generate_scenes, DetectorModel, ScenarioConfig};
    use approx::assert_relative_eq;

    fn fixture_scene(acceptable_at: Option<usize>, n: usize) -> Scene {
        let gt = BBox::new(100.0, 100.0, 200.0, 200.0).unwrap();
        let proposals: Vec<ScoredProposal> = (0..n)
            .map(|i| {
                let bbox = if Some(i) == acceptable_at {
                    gt
                } else {
                    let off = 10.0 + 25.0 * i as f64;
                    BBox::new(off, 0.0, off + 20.0, 20.0).unwrap()
                };
                ScoredProposal::new(bbox, 0.9 - 0.1 * i as f64).unwrap()
            })
            .collect();
        Scene::new("fx".into(), 0, vec![gt], proposals, (640.0, 480.0), 7).unwrap()
    }

    fn fast() -> ActionTimings {
        ActionTimings::extreme_clicking()
    }

    #[test]
    fn pure_draw_costs_draw_time() {
        let scene = fixture_scene(Some(0), 3);
        let outcome =
            run_episode(&Strategy::Draw, &scene, QualityLevel::high(), &fast()).unwrap();
        assert_eq!(outcome.actions, vec![ActionRecord::Draw]);
        assert_eq!(outcome.total_time_s, 7.0);
        assert_eq!(outcome.produced_iou, 1.0);
    }

    #[test]
    fn fixed_series_stops_at_acceptance() {
        let scene = fixture_scene(Some(1), 4);
        let outcome = run_episode(
            &Strategy::FixedSeries(2),
            &scene,
            QualityLevel::high(),
            &fast(),
        )
        .unwrap();
        assert_eq!(
            outcome.actions,
            vec![ActionRecord::Verify(0), ActionRecord::Verify(1)]
        );
        assert_relative_eq!(outcome.total_time_s, 3.6, max_relative = 1e-12);
        assert_eq!(outcome.accepted_at, Some(1));
    }

    #[test]
    fn fixed_series_falls_back_to_drawing() {
        let scene = fixture_scene(None, 3);
        let outcome = run_episode(
            &Strategy::FixedSeries(1),
            &scene,
            QualityLevel::high(),
            &fast(),
        )
        .unwrap();
        assert_eq!(
            outcome.actions,
            vec![ActionRecord::Verify(0), ActionRecord::Draw]
        );
        assert_relative_eq!(outcome.total_time_s, 1.8 + 7.0, max_relative = 1e-12);
        assert!(outcome.ended_with_draw());
        assert_eq!(outcome.composition_label(&fast()), "VX");
    }

    #[test]
    fn verify_all_exhausts_proposals() {
        let scene = fixture_scene(None, 4);
        let outcome =
            run_episode(&Strategy::VerifyAll, &scene, QualityLevel::high(), &fast()).unwrap();
        assert_eq!(outcome.num_verifications(), 4);
        assert!(outcome.ended_with_draw());
        assert_relative_eq!(
            outcome.total_time_s,
            4.0 * 1.8 + 7.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn clairvoyant_picks_the_cheaper_path() {
        // First acceptable at position 1 (1-based): one verification wins.
        let near = fixture_scene(Some(0), 3);
        let outcome =
            run_episode(&Strategy::Clairvoyant, &near, QualityLevel::high(), &fast()).unwrap();
        assert_eq!(outcome.total_time_s, 1.8);

        // First acceptable at position 5: drawing wins over 9 s of checks.
        let far = fixture_scene(Some(4), 5);
        let outcome =
            run_episode(&Strategy::Clairvoyant, &far, QualityLevel::high(), &fast()).unwrap();
        assert_eq!(outcome.total_time_s, 7.0);

        let none = fixture_scene(None, 3);
        let outcome =
            run_episode(&Strategy::Clairvoyant, &none, QualityLevel::high(), &fast()).unwrap();
        assert_eq!(outcome.total_time_s, 7.0);
    }

    #[test]
    fn episode_time_decomposes_into_action_costs() {
        let config = ScenarioConfig::new(60, 2, 31);
        let detector = DetectorModel::new(0.5, 2).unwrap();
        let scenes = generate_scenes(&config, &detector).unwrap();
        let timings = ActionTimings::classic_drawing();
        for strategy in [
            Strategy::Draw,
            Strategy::FixedSeries(2),
            Strategy::VerifyAll,
            Strategy::Clairvoyant,
        ] {
            for scene in &scenes {
                let o = run_episode(&strategy, scene, QualityLevel::high(), &timings).unwrap();
                let verifications = o.num_verifications() as f64;
                let draws = o.ended_with_draw() as u8 as f64;
                assert_relative_eq!(
                    o.total_time_s,
                    verifications * timings.verify_s + draws * timings.draw_s,
                    max_relative = 1e-12
                );
                // Termination: the produced box always clears the bar.
                assert!(o.produced_iou >= QualityLevel::high().alpha());
            }
        }
    }

    #[test]
    fn clairvoyant_never_beaten_on_identical_scenes() {
        let config = ScenarioConfig::new(150, 2, 77);
        let detector = DetectorModel::new(0.6, 2).unwrap();
        let scenes = generate_scenes(&config, &detector).unwrap();
        let quality = QualityLevel::high();
        let timings = fast();
        let bound = run_batch(&Strategy::Clairvoyant, &scenes, quality, &timings, 5).unwrap();
        for strategy in [
            Strategy::Draw,
            Strategy::FixedSeries(1),
            Strategy::FixedSeries(3),
            Strategy::VerifyAll,
        ] {
            let report = run_batch(&strategy, &scenes, quality, &timings, 5).unwrap();
            assert!(
                bound.mean_time_s <= report.mean_time_s + 1e-12,
                "lower bound {} beaten by {} at {}",
                bound.mean_time_s,
                report.strategy,
                report.mean_time_s
            );
        }
    }

    #[test]
    fn batch_report_is_consistent() {
        let config = ScenarioConfig::new(80, 2, 13);
        let detector = DetectorModel::new(0.4, 2).unwrap();
        let scenes = generate_scenes(&config, &detector).unwrap();
        let report = run_batch(
            &Strategy::FixedSeries(2),
            &scenes,
            QualityLevel::high(),
            &fast(),
            3,
        )
        .unwrap();
        assert_eq!(report.n_episodes, 80);
        assert_eq!(report.drawn_boxes + report.verified_boxes, 80);
        let histogram_total: usize = report.composition.iter().map(|(_, c)| c).sum();
        assert_eq!(histogram_total, 80);

        // Pure drawing: constant time, zero standard error.
        let draw = run_batch(&Strategy::Draw, &scenes, QualityLevel::high(), &fast(), 3).unwrap();
        assert_eq!(draw.mean_time_s, 7.0);
        assert_eq!(draw.stderr_s, 0.0);
        assert_eq!(draw.composition, vec![("X".into(), 80)]);
    }

    #[test]
    fn bernoulli_first_box_acceptance_frequency() {
        use crate::scene::make_bernoulli_batch;
        let scene = &make_bernoulli_batch(&[vec![0.5, 0.5]], 17).unwrap()[0];
        let timings = fast();
        const SERIES: usize = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(scene.scene_seed);
        let mut first_accepted = 0usize;
        for _ in 0..SERIES {
            let (elapsed, _) =
                run_bernoulli_episode(scene, &[0, 1], &timings, &mut rng).unwrap();
            if elapsed == timings.verify_s {
                first_accepted += 1;
            }
        }
        let rate = first_accepted as f64 / SERIES as f64;
        assert!((rate - 0.5).abs() < 0.005, "first-box acceptance rate {rate}");
    }

    #[test]
    fn bernoulli_episode_certain_outcomes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let certain = BernoulliScene::new(vec![1.0], 0, 1).unwrap();
        let (t, drew) = run_bernoulli_episode(&certain, &[0], &fast(), &mut rng).unwrap();
        assert_eq!((t, drew), (1.8, false));

        let hopeless = BernoulliScene::new(vec![0.0, 0.0], 0, 2).unwrap();
        let (t, drew) = run_bernoulli_episode(&hopeless, &[0, 1], &fast(), &mut rng).unwrap();
        assert_eq!((t, drew), (1.8 * 2.0 + 7.0, true));

        // No proposals: drawing is the only option.
        let empty = BernoulliScene::new(vec![], 0, 3).unwrap();
        let (t, drew) = run_bernoulli_episode(&empty, &[], &fast(), &mut rng).unwrap();
        assert_eq!((t, drew), (7.0, true));
    }

    #[test]
    fn plans_depend_only_on_threshold_crossings() {
        use crate::cost::true_acceptance_probs;
        let config = ScenarioConfig::new(250, 2, 91);
        let detector = DetectorModel::new(0.5, 2).unwrap();
        let scenes = generate_scenes(&config, &detector).unwrap();
        let quality = QualityLevel::high();
        let timings = fast();

        for scene in &scenes {
            let truth = true_acceptance_probs(scene, quality);
            // Distorted probabilities that preserve which side of
            // t_verify/t_draw each box falls on.
            let distorted = crate::cost::AcceptanceEstimate::new(
                truth
                    .probs()
                    .iter()
                    .map(|&p| if p == 1.0 { 0.85 } else { 0.15 })
                    .collect(),
            )
            .unwrap();

            let exact_plan = threshold_plan(&truth, &timings, PlanOrdering::DetectorScore);
            let distorted_plan =
                threshold_plan(&distorted, &timings, PlanOrdering::DetectorScore);
            assert_eq!(exact_plan.box_order, distorted_plan.box_order);

            // With perfect probabilities the realized episode is the
            // clairvoyant threshold policy: the first planned box is
            // acceptable, so one verification when anything qualifies and a
            // straight draw otherwise.
            let outcome =
                run_verification_series(&exact_plan.box_order, scene, quality, &timings);
            let any_acceptable = truth.probs().iter().any(|&p| p == 1.0);
            let expected = if any_acceptable {
                timings.verify_s
            } else {
                timings.draw_s
            };
            assert_eq!(outcome.total_time_s, expected);
        }
    }

    #[test]
    fn kfold_partitions_cover_everything_once() {
        let config = ScenarioConfig::new(10, 2, 5);
        let detector = DetectorModel::new(0.5, 2).unwrap();
        let scenes = generate_scenes(&config, &detector).unwrap();
        let reports = kfold_evaluate(
            &scenes,
            &[StrategySpec::Draw],
            QualityLevel::high(),
            &fast(),
            &KfoldConfig::new(2, 11),
        )
        .unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].fold, 0);
        assert_eq!(reports[1].fold, 1);
        let total: usize = reports.iter().map(|r| r.n_episodes).sum();
        assert_eq!(total, 10);

        // Fixed strategies do not depend on the training split.
        for r in &reports {
            assert_eq!(r.mean_time_s, 7.0);
        }
    }

    #[test]
    fn kfold_rejects_degenerate_setups() {
        let config = ScenarioConfig::new(4, 2, 5);
        let detector = DetectorModel::new(0.5, 2).unwrap();
        let scenes = generate_scenes(&config, &detector).unwrap();
        assert!(kfold_evaluate(
            &scenes,
            &[StrategySpec::Draw],
            QualityLevel::high(),
            &fast(),
            &KfoldConfig::new(1, 0),
        )
        .is_err());
        assert!(kfold_evaluate(
            &scenes,
            &[StrategySpec::Draw],
            QualityLevel::high(),
            &fast(),
            &KfoldConfig::new(5, 0),
        )
        .is_err());
    }
}
