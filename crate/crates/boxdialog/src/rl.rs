//! A Q-learning agent that chooses verify-vs-draw per proposal, trained by
//! trial and error in the simulated environment with experience replay and a
//! periodically synced target network.
//!
//! Rewards are the negative action times, episodes are finite and
//! undiscounted, so maximizing the return minimizes annotation time. When no
//! proposal is left the draw action is forced, which keeps the guarantee
//! that every dialog ends with a box.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotator::{self, ActionTimings, QualityLevel};
use crate::episode::{ActionRecord, EpisodeOutcome};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector};
use crate::geometry;
use crate::mlp::{Gradients, Mlp, Normalizer};
use crate::scene::Scene;

/// The two dialog actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DialogAction {
    Verify,
    Draw,
}

impl DialogAction {
    pub fn index(self) -> usize {
        match self {
            DialogAction::Verify => 0,
            DialogAction::Draw => 1,
        }
    }
}

/// How an episode terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeEnd {
    Accepted,
    Drawn,
}

/// Undiscounted return of an episode: the negative total annotation time.
pub fn episode_return(
    num_verifications: usize,
    ended_by: EpisodeEnd,
    timings: &ActionTimings,
) -> f64 {
    let verification_time = num_verifications as f64 * timings.verify_s;
    match ended_by {
        EpisodeEnd::Accepted => {
            assert!(num_verifications >= 1, "acceptance requires a verification");
            -verification_time
        }
        EpisodeEnd::Drawn => -(verification_time + timings.draw_s),
    }
}

/// Agent state: the current proposal's features plus its position and how
/// many proposals are left (current included). `remaining == 0` means the
/// list is exhausted and drawing is forced.
#[derive(Debug, Clone, PartialEq)]
pub struct RlState {
    pub features: FeatureVector,
    pub position: usize,
    pub remaining: usize,
}

impl RlState {
    fn raw_input(&self) -> Vec<f64> {
        let mut input = self.features.values().to_vec();
        input.push(self.position as f64);
        input.push(self.remaining as f64);
        input
    }
}

/// One agent-environment interaction. Terminal transitions carry the action
/// reward and no successor: the terminal value is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RlTransition {
    pub state: RlState,
    pub action: DialogAction,
    pub reward: f64,
    pub next_state: Option<RlState>,
}

/// Bounded FIFO of transitions with uniform without-replacement sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    buffer: VecDeque<RlTransition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            buffer: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn push(&mut self, transition: RlTransition) {
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(transition);
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn get(&self, index: usize) -> &RlTransition {
        &self.buffer[index]
    }

    /// Uniform sample of distinct indices (partial Fisher-Yates).
    pub fn sample_indices(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let n = self.buffer.len();
        let count = count.min(n);
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = rng.random_range(i..n);
            indices.swap(i, j);
        }
        indices.truncate(count);
        indices
    }
}

/// Q-learning knobs. Exploration, batching, and iteration counts default to
/// the experiment settings; the rest are documented fills.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlTrainConfig {
    pub epsilon: f64,
    pub batch_size: usize,
    pub training_iterations: usize,
    pub buffer_capacity: usize,
    pub learning_rate: f64,
    pub target_sync_period: usize,
    pub hidden_layers: Vec<usize>,
    pub episodes_per_iteration: usize,
    pub validation_fraction: f64,
    pub eval_period: usize,
    pub seed: u64,
}

impl RlTrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            epsilon: 0.2,
            batch_size: 64,
            training_iterations: 800,
            buffer_capacity: 50_000,
            // Rewards are raw seconds, so the squared-error scale needs a
            // step this large to converge within the iteration budget.
            learning_rate: 5e-3,
            target_sync_period: 50,
            hidden_layers: vec![30, 30],
            episodes_per_iteration: 4,
            validation_fraction: 0.2,
            eval_period: 25,
            seed,
        }
    }
}

impl Default for RlTrainConfig {
    fn default() -> Self {
        Self::new(0)
    }
}

const CHECKPOINT_FORMAT: &str = "boxdialog-qnetwork-v1";

/// A trained action-value network mapping states to `[Q(verify), Q(draw)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    format: String,
    net: Mlp,
    normalizer: Normalizer,
    num_classes: usize,
    pub config_echo: RlTrainConfig,
}

impl QNetwork {
    fn state_input(&self, state: &RlState) -> Vec<f64> {
        self.normalizer.transform(&state.raw_input())
    }

    pub fn q_values(&self, state: &RlState) -> [f64; 2] {
        let out = self.net.forward(&self.state_input(state));
        [out[0], out[1]]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let model: Self = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if model.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unexpected checkpoint format {:?}",
                model.format
            )));
        }
        Ok(model)
    }
}

/// Epsilon-greedy action choice. Drawing is forced once the proposal list is
/// exhausted; greedy ties go to verification.
pub fn act(
    qnet: &QNetwork,
    state: &RlState,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> DialogAction {
    if state.remaining == 0 {
        return DialogAction::Draw;
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return if rng.random::<bool>() {
            DialogAction::Verify
        } else {
            DialogAction::Draw
        };
    }
    let q = qnet.q_values(state);
    if q[0] >= q[1] {
        DialogAction::Verify
    } else {
        DialogAction::Draw
    }
}

fn make_state(scene: &Scene, position: usize, num_classes: usize) -> Result<RlState> {
    let n = scene.proposals.len();
    // Past the last proposal the state keeps the last proposal's features;
    // `remaining == 0` marks it as draw-only.
    let feature_index = position.min(n.saturating_sub(1));
    Ok(RlState {
        features: extract_features(scene, feature_index, num_classes)?,
        position,
        remaining: n - position.min(n),
    })
}

/// Greedy (epsilon = 0) rollout of the policy over a scene, consuming
/// proposals in score order.
pub fn greedy_rollout(
    qnet: &QNetwork,
    scene: &Scene,
    quality: QualityLevel,
    timings: &ActionTimings,
) -> Result<EpisodeOutcome> {
    let n = scene.proposals.len();
    let mut actions = Vec::new();
    let mut elapsed = 0.0;
    let mut position = 0;
    loop {
        let decision = if position >= n {
            DialogAction::Draw
        } else {
            let state = make_state(scene, position, qnet.num_classes)?;
            let q = qnet.q_values(&state);
            if q[0] >= q[1] {
                DialogAction::Verify
            } else {
                DialogAction::Draw
            }
        };
        match decision {
            DialogAction::Draw => {
                let drawn = annotator::draw(scene, timings);
                actions.push(ActionRecord::Draw);
                elapsed += drawn.elapsed_s;
                return Ok(EpisodeOutcome {
                    actions,
                    total_time_s: elapsed,
                    produced_box: drawn.bbox,
                    accepted_at: None,
                    produced_iou: geometry::max_iou(&drawn.bbox, &scene.gt_boxes),
                });
            }
            DialogAction::Verify => {
                let proposal = &scene.proposals[position];
                let verdict = annotator::verify(&proposal.bbox, scene, quality, timings);
                actions.push(ActionRecord::Verify(position));
                elapsed += verdict.elapsed_s;
                if verdict.accepted {
                    return Ok(EpisodeOutcome {
                        actions,
                        total_time_s: elapsed,
                        produced_box: proposal.bbox,
                        accepted_at: Some(position),
                        produced_iou: geometry::max_iou(&proposal.bbox, &scene.gt_boxes),
                    });
                }
                position += 1;
            }
        }
    }
}

/// Alias for executing the greedy policy as an episode.
pub fn policy_episode(
    qnet: &QNetwork,
    scene: &Scene,
    quality: QualityLevel,
    timings: &ActionTimings,
) -> Result<EpisodeOutcome> {
    greedy_rollout(qnet, scene, quality, timings)
}

/// A regression batch for the temporal-difference loss: normalized state
/// inputs, chosen action indices, and fixed Bellman targets.
#[derive(Debug, Clone)]
pub struct TdBatch {
    pub inputs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub targets: Vec<f64>,
}

/// Mean squared temporal-difference error, `(1/2B) sum (Q(s,a) - target)^2`.
pub fn td_loss(net: &Mlp, batch: &TdBatch) -> f64 {
    let mut total = 0.0;
    for ((input, &action), &target) in batch.inputs.iter().zip(&batch.actions).zip(&batch.targets)
    {
        let q = net.forward(input)[action];
        total += 0.5 * (q - target) * (q - target);
    }
    total / batch.inputs.len() as f64
}

/// Analytic gradient of [`td_loss`] with respect to the network parameters.
pub fn td_gradients(net: &Mlp, batch: &TdBatch) -> Gradients {
    let mut grads = net.zero_gradients();
    let mut dloss = vec![0.0; net.output_dim()];
    for ((input, &action), &target) in batch.inputs.iter().zip(&batch.actions).zip(&batch.targets)
    {
        let trace = net.forward_trace(input);
        dloss.fill(0.0);
        dloss[action] = trace.output()[action] - target;
        net.backward(&trace, &dloss, &mut grads);
    }
    grads.scale(1.0 / batch.inputs.len() as f64);
    grads
}

// Value of the best action allowed in a state: past the last proposal only
// drawing remains, so bootstrapping must not look at the verify head there.
fn allowed_max(net: &Mlp, normalizer: &Normalizer, state: &RlState) -> f64 {
    let out = net.forward(&normalizer.transform(&state.raw_input()));
    if state.remaining == 0 {
        out[DialogAction::Draw.index()]
    } else {
        out[0].max(out[1])
    }
}

fn collect_episode(
    net: &Mlp,
    normalizer: &Normalizer,
    scene: &Scene,
    num_classes: usize,
    quality: QualityLevel,
    timings: &ActionTimings,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
    sink: &mut ReplayBuffer,
) -> Result<()> {
    let n = scene.proposals.len();
    if n == 0 {
        // Forced draw with no decision taken: nothing to learn from.
        return Ok(());
    }
    let mut position = 0;
    loop {
        let state = make_state(scene, position, num_classes)?;
        let action = if state.remaining == 0 {
            DialogAction::Draw
        } else if rng.random::<f64>() < epsilon {
            if rng.random::<bool>() {
                DialogAction::Verify
            } else {
                DialogAction::Draw
            }
        } else {
            let out = net.forward(&normalizer.transform(&state.raw_input()));
            if out[0] >= out[1] {
                DialogAction::Verify
            } else {
                DialogAction::Draw
            }
        };
        match action {
            DialogAction::Draw => {
                sink.push(RlTransition {
                    state,
                    action,
                    reward: -timings.draw_s,
                    next_state: None,
                });
                return Ok(());
            }
            DialogAction::Verify => {
                let verdict = annotator::verify(
                    &scene.proposals[position].bbox,
                    scene,
                    quality,
                    timings,
                );
                if verdict.accepted {
                    sink.push(RlTransition {
                        state,
                        action,
                        reward: -timings.verify_s,
                        next_state: None,
                    });
                    return Ok(());
                }
                let next = make_state(scene, position + 1, num_classes)?;
                sink.push(RlTransition {
                    state,
                    action,
                    reward: -timings.verify_s,
                    next_state: Some(next),
                });
                position += 1;
            }
        }
    }
}

/// Trains the agent on the given scenes. A validation subset is reserved and
/// the checkpoint with the best greedy validation mean episode time is
/// returned. Deterministic given the seed.
pub fn train_agent(
    scenes: &[Scene],
    num_classes: usize,
    quality: QualityLevel,
    timings: &ActionTimings,
    config: &RlTrainConfig,
) -> Result<QNetwork> {
    if scenes.is_empty() {
        return Err(Error::Config("cannot train the agent on no scenes".into()));
    }
    if config.batch_size == 0 || config.episodes_per_iteration == 0 {
        return Err(Error::Config("invalid agent training configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut indices: Vec<usize> = (0..scenes.len()).collect();
    indices.shuffle(&mut rng);
    let val_len = ((scenes.len() as f64 * config.validation_fraction).round() as usize)
        .clamp(1, scenes.len().saturating_sub(1).max(1));
    let (val_idx, train_idx) = indices.split_at(val_len.min(scenes.len() - 1).max(1));
    let train_scenes: Vec<&Scene> = train_idx.iter().map(|&i| &scenes[i]).collect();
    let val_scenes: Vec<&Scene> = val_idx.iter().map(|&i| &scenes[i]).collect();

    let mut rows = Vec::new();
    for scene in &train_scenes {
        for position in 0..scene.proposals.len() {
            rows.push(make_state(scene, position, num_classes)?.raw_input());
        }
    }
    if rows.is_empty() {
        return Err(Error::Config(
            "training scenes have no proposals to learn from".into(),
        ));
    }
    let normalizer = Normalizer::fit(&rows);
    let input_dim = rows[0].len();

    let mut layer_sizes = vec![input_dim];
    layer_sizes.extend_from_slice(&config.hidden_layers);
    layer_sizes.push(2);
    let mut net = Mlp::new(&layer_sizes, &mut rng);
    let mut target_net = net.clone();

    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut grad_steps = 0usize;
    let mut best_net = net.clone();
    let mut best_score = f64::INFINITY;

    let validation_score = |net: &Mlp| -> Result<f64> {
        let qnet = QNetwork {
            format: CHECKPOINT_FORMAT.into(),
            net: net.clone(),
            normalizer: normalizer.clone(),
            num_classes,
            config_echo: config.clone(),
        };
        let mut total = 0.0;
        for scene in &val_scenes {
            total += greedy_rollout(&qnet, scene, quality, timings)?.total_time_s;
        }
        Ok(total / val_scenes.len() as f64)
    };

    for iteration in 0..config.training_iterations {
        for _ in 0..config.episodes_per_iteration {
            let scene = train_scenes[rng.random_range(0..train_scenes.len())];
            collect_episode(
                &net,
                &normalizer,
                scene,
                num_classes,
                quality,
                timings,
                config.epsilon,
                &mut rng,
                &mut buffer,
            )?;
        }
        if buffer.len() >= config.batch_size {
            let sampled = buffer.sample_indices(config.batch_size, &mut rng);
            let mut batch = TdBatch {
                inputs: Vec::with_capacity(sampled.len()),
                actions: Vec::with_capacity(sampled.len()),
                targets: Vec::with_capacity(sampled.len()),
            };
            for &idx in &sampled {
                let transition = buffer.get(idx);
                batch
                    .inputs
                    .push(normalizer.transform(&transition.state.raw_input()));
                batch.actions.push(transition.action.index());
                // Undiscounted: episodes are finite and the return is a
                // plain sum of rewards.
                let bootstrap = transition
                    .next_state
                    .as_ref()
                    .map(|next| allowed_max(&target_net, &normalizer, next))
                    .unwrap_or(0.0);
                batch.targets.push(transition.reward + bootstrap);
            }
            let grads = td_gradients(&net, &batch);
            net.apply_step(&grads, config.learning_rate);
            grad_steps += 1;
            if grad_steps % config.target_sync_period == 0 {
                target_net = net.clone();
            }
        }
        if (iteration + 1) % config.eval_period == 0
            || iteration + 1 == config.training_iterations
        {
            let score = validation_score(&net)?;
            if score < best_score {
                best_score = score;
                best_net = net.clone();
            }
        }
    }

    Ok(QNetwork {
        format: CHECKPOINT_FORMAT.into(),
        net: best_net,
        normalizer,
        num_classes,
        config_echo: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, ScoredProposal};
    use approx::assert_relative_eq;

    fn fast() -> ActionTimings {
        ActionTimings::extreme_clicking()
    }

    // Scenes whose first proposal is the ground-truth box (always accepted).
    fn all_accept_scenes(count: usize) -> Vec<Scene> {
        (0..count)
            .map(|i| {
                let off = (i % 7) as f64 * 10.0;
                let gt = BBox::new(50.0 + off, 50.0, 250.0 + off, 250.0).unwrap();
                let junk =
                    BBox::new(400.0, 300.0, 470.0, 380.0).unwrap();
                Scene::new(
                    format!("acc-{i}"),
                    0,
                    vec![gt],
                    vec![
                        ScoredProposal::new(gt, 0.95).unwrap(),
                        ScoredProposal::new(junk, 0.3).unwrap(),
                    ],
                    (640.0, 480.0),
                    i as u64,
                )
                .unwrap()
            })
            .collect()
    }

    // Scenes where no proposal is ever acceptable.
    fn all_reject_scenes(count: usize, proposals: usize) -> Vec<Scene> {
        (0..count)
            .map(|i| {
                let gt = BBox::new(500.0, 380.0, 620.0, 460.0).unwrap();
                let candidates: Vec<ScoredProposal> = (0..proposals)
                    .map(|j| {
                        let off = 5.0 + 40.0 * j as f64;
                        ScoredProposal::new(
                            BBox::new(off, 5.0, off + 30.0, 35.0).unwrap(),
                            0.8 - 0.1 * j as f64,
                        )
                        .unwrap()
                    })
                    .collect();
                Scene::new(
                    format!("rej-{i}"),
                    0,
                    vec![gt],
                    candidates,
                    (640.0, 480.0),
                    i as u64,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn return_formula() {
        let timings = fast();
        assert_eq!(episode_return(1, EpisodeEnd::Accepted, &timings), -1.8);
        // Two failed verifications then a draw.
        assert_relative_eq!(
            episode_return(2, EpisodeEnd::Drawn, &timings),
            -10.6,
            max_relative = 1e-12
        );
        assert_eq!(episode_return(0, EpisodeEnd::Drawn, &timings), -7.0);
    }

    #[test]
    fn replay_buffer_is_bounded_fifo() {
        let state = RlState {
            features: FeatureVector::from_values(vec![0.5, 0.1, 0.5, 0.0, 0.0, 1.0]).unwrap(),
            position: 0,
            remaining: 1,
        };
        let mut buffer = ReplayBuffer::new(3);
        for i in 0..5 {
            buffer.push(RlTransition {
                state: state.clone(),
                action: DialogAction::Draw,
                reward: -(i as f64),
                next_state: None,
            });
        }
        assert_eq!(buffer.len(), 3);
        assert_eq!(buffer.get(0).reward, -2.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample = buffer.sample_indices(2, &mut rng);
        assert_eq!(sample.len(), 2);
        assert_ne!(sample[0], sample[1]);
    }

    #[test]
    fn epsilon_one_explores_uniformly() {
        let scenes = all_accept_scenes(10);
        let config = RlTrainConfig {
            training_iterations: 1,
            ..RlTrainConfig::new(3)
        };
        let qnet = train_agent(&scenes, 1, QualityLevel::high(), &fast(), &config).unwrap();
        let state = make_state(&scenes[0], 0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 100_000;
        let verifies = (0..trials)
            .filter(|_| act(&qnet, &state, 1.0, &mut rng) == DialogAction::Verify)
            .count();
        let rate = verifies as f64 / trials as f64;
        assert!((rate - 0.5).abs() < 0.01, "verify rate {rate}");
    }

    #[test]
    fn exhausted_state_forces_drawing() {
        let scenes = all_accept_scenes(10);
        let config = RlTrainConfig {
            training_iterations: 1,
            ..RlTrainConfig::new(3)
        };
        let qnet = train_agent(&scenes, 1, QualityLevel::high(), &fast(), &config).unwrap();
        let exhausted = make_state(&scenes[0], 2, 1).unwrap();
        assert_eq!(exhausted.remaining, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            assert_eq!(act(&qnet, &exhausted, 0.0, &mut rng), DialogAction::Draw);
        }
    }

    #[test]
    fn td_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Mlp::new(&[7, 12, 2], &mut rng);
        let batch = TdBatch {
            inputs: (0..16)
                .map(|_| (0..7).map(|_| rng.random_range(-1.5..1.5)).collect())
                .collect(),
            actions: (0..16).map(|_| rng.random_range(0..2)).collect(),
            targets: (0..16).map(|_| rng.random_range(-20.0..0.0)).collect(),
        };
        let grads = td_gradients(&net, &batch);
        let eps = 1e-6;
        for index in 0..net.num_params() {
            let mut plus = net.clone();
            *plus.param_mut(index) += eps;
            let mut minus = net.clone();
            *minus.param_mut(index) -= eps;
            let numeric = (td_loss(&plus, &batch) - td_loss(&minus, &batch)) / (2.0 * eps);
            let analytic = Mlp::grad_at(&grads, index);
            let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-10);
            assert!(
                rel < 1e-4,
                "param {index}: numeric {numeric} analytic {analytic}"
            );
        }
    }

    #[test]
    fn learns_to_verify_when_everything_is_accepted() {
        let scenes = all_accept_scenes(60);
        let config = RlTrainConfig::new(12);
        let qnet = train_agent(&scenes, 1, QualityLevel::high(), &fast(), &config).unwrap();
        let times: Vec<f64> = scenes
            .iter()
            .map(|s| {
                greedy_rollout(&qnet, s, QualityLevel::high(), &fast())
                    .unwrap()
                    .total_time_s
            })
            .collect();
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        assert!(
            (mean - 1.8).abs() / 1.8 < 0.05,
            "mean episode time {mean}, want about 1.8"
        );
    }

    #[test]
    fn learns_to_draw_when_nothing_is_accepted() {
        let scenes = all_reject_scenes(60, 5);
        let config = RlTrainConfig::new(13);
        let qnet = train_agent(&scenes, 1, QualityLevel::high(), &fast(), &config).unwrap();
        let times: Vec<f64> = scenes
            .iter()
            .map(|s| {
                greedy_rollout(&qnet, s, QualityLevel::high(), &fast())
                    .unwrap()
                    .total_time_s
            })
            .collect();
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        assert!(
            (mean - 7.0).abs() / 7.0 < 0.05,
            "mean episode time {mean}, want about 7.0"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let scenes = all_accept_scenes(30);
        let config = RlTrainConfig {
            training_iterations: 120,
            ..RlTrainConfig::new(21)
        };
        let a = train_agent(&scenes, 1, QualityLevel::high(), &fast(), &config).unwrap();
        let b = train_agent(&scenes, 1, QualityLevel::high(), &fast(), &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rollout_return_equals_negative_elapsed_time() {
        let mut scenes = all_accept_scenes(20);
        scenes.extend(all_reject_scenes(20, 4));
        let config = RlTrainConfig {
            training_iterations: 150,
            ..RlTrainConfig::new(9)
        };
        let qnet = train_agent(&scenes, 1, QualityLevel::high(), &fast(), &config).unwrap();
        for scene in &scenes {
            let outcome = greedy_rollout(&qnet, scene, QualityLevel::high(), &fast()).unwrap();
            let ended = if outcome.accepted_at.is_some() {
                EpisodeEnd::Accepted
            } else {
                EpisodeEnd::Drawn
            };
            let ret = episode_return(outcome.num_verifications(), ended, &fast());
            assert_relative_eq!(ret, -outcome.total_time_s, max_relative = 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let scenes = all_accept_scenes(20);
        let config = RlTrainConfig {
            training_iterations: 30,
            ..RlTrainConfig::new(2)
        };
        let qnet = train_agent(&scenes, 1, QualityLevel::high(), &fast(), &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qnet.json");
        qnet.save(&path).unwrap();
        let loaded = QNetwork::load(&path).unwrap();
        assert_eq!(loaded, qnet);
    }

    #[test]
    fn empty_scene_set_is_a_configuration_error() {
        assert!(train_agent(
            &[],
            1,
            QualityLevel::high(),
            &fast(),
            &RlTrainConfig::new(0)
        )
        .is_err());
    }
}
