//! The box-acceptance classifier: a small probabilistic model trained on
//! simulated verification responses, predicting the probability that a
//! proposal passes verification at the configured quality level.
//!
//! Labels come from the ground-truth indicator (IoU >= alpha against some
//! ground-truth box), features from [`crate::features`]. The trained model
//! feeds the probability-threshold planner.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotator::QualityLevel;
use crate::cost::{true_acceptance_probs, AcceptanceEstimate};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector};
use crate::mlp::{sigmoid, Mlp, Normalizer};
use crate::scene::Scene;

/// Feature-label pairs for classifier training.
#[derive(Debug, Clone)]
pub struct LabeledBoxSet {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<bool>,
    pub num_classes: usize,
}

impl LabeledBoxSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Labels every proposal of every scene with the verification indicator at
/// `quality`.
pub fn build_training_set(
    scenes: &[Scene],
    quality: QualityLevel,
    num_classes: usize,
) -> Result<LabeledBoxSet> {
    if scenes.is_empty() {
        return Err(Error::Config("cannot build a training set from no scenes".into()));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for scene in scenes {
        let truth = true_acceptance_probs(scene, quality);
        for index in 0..scene.proposals.len() {
            features.push(extract_features(scene, index, num_classes)?);
            labels.push(truth.probs()[index] == 1.0);
        }
    }
    Ok(LabeledBoxSet {
        features,
        labels,
        num_classes,
    })
}

/// Classifier training knobs. Mini-batch gradient descent on cross-entropy
/// with early stopping on holdout loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(holdout_fraction: f64, seed: u64) -> Self {
        Self {
            hidden_layers: vec![20, 20],
            learning_rate: 0.01,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            holdout_fraction,
            seed,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(0.2, 0)
    }
}

/// Facts recorded about a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub epochs_run: usize,
    pub seed: u64,
    pub holdout_brier: f64,
    /// True when the data had a single label class and the model fell back
    /// to emitting the class prior.
    pub degenerate: bool,
    /// Full-training-set cross-entropy after each accepted epoch, the
    /// initial loss first. Non-increasing by construction.
    pub train_loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum ClassifierKind {
    /// Single-label fallback emitting the class prior.
    Constant { prior: f64 },
    Network { net: Mlp, normalizer: Normalizer },
}

/// A trained acceptance classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    format: String,
    kind: ClassifierKind,
    input_dim: usize,
    pub metadata: TrainMetadata,
}

const CHECKPOINT_FORMAT: &str = "boxdialog-classifier-v1";
const PROB_FLOOR: f64 = 1e-9;

fn clamp_open(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

fn cross_entropy(p: f64, label: bool) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

impl ClassifierModel {
    /// Predicted acceptance probability, strictly inside (0, 1).
    pub fn predict(&self, features: &FeatureVector) -> Result<f64> {
        if features.dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: features.dim(),
            });
        }
        Ok(match &self.kind {
            ClassifierKind::Constant { prior } => *prior,
            ClassifierKind::Network { net, normalizer } => {
                let input = normalizer.transform(features.values());
                clamp_open(sigmoid(net.forward(&input)[0]))
            }
        })
    }

    /// Predicted acceptance probabilities for every proposal of a scene.
    pub fn estimate_scene(&self, scene: &Scene, num_classes: usize) -> Result<AcceptanceEstimate> {
        let probs = (0..scene.proposals.len())
            .map(|i| self.predict(&extract_features(scene, i, num_classes)?))
            .collect::<Result<Vec<f64>>>()?;
        AcceptanceEstimate::new(probs)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
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

struct Split {
    train: Vec<usize>,
    holdout: Vec<usize>,
}

fn split_indices(n: usize, holdout_fraction: f64, rng: &mut ChaCha8Rng) -> Split {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let holdout_len = ((n as f64 * holdout_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let holdout = indices[..holdout_len].to_vec();
    let train = if holdout_len < n {
        indices[holdout_len..].to_vec()
    } else {
        indices.clone()
    };
    Split { train, holdout }
}

/// Trains the classifier. Single-label data degrades to a constant model
/// emitting the class prior; this is recorded in the metadata rather than
/// treated as an error.
pub fn train(data: &LabeledBoxSet, config: &TrainConfig) -> Result<ClassifierModel> {
    if data.is_empty() {
        return Err(Error::Config("classifier training set is empty".into()));
    }
    if !(0.0..1.0).contains(&config.holdout_fraction) || config.batch_size == 0 {
        return Err(Error::Config("invalid classifier training configuration".into()));
    }
    let input_dim = data.features[0].dim();
    if data.features.iter().any(|f| f.dim() != input_dim) {
        return Err(Error::Config("inconsistent feature dimensions".into()));
    }

    let positives = data.labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == data.len() {
        let prior = clamp_open(positives as f64 / data.len() as f64);
        let brier: f64 = data
            .labels
            .iter()
            .map(|&l| {
                let y = if l { 1.0 } else { 0.0 };
                (prior - y) * (prior - y)
            })
            .sum::<f64>()
            / data.len() as f64;
        return Ok(ClassifierModel {
            format: CHECKPOINT_FORMAT.into(),
            kind: ClassifierKind::Constant { prior },
            input_dim,
            metadata: TrainMetadata {
                epochs_run: 0,
                seed: config.seed,
                holdout_brier: brier,
                degenerate: true,
                train_loss_curve: Vec::new(),
            },
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let split = split_indices(data.len(), config.holdout_fraction, &mut rng);

    let train_rows: Vec<Vec<f64>> = split
        .train
        .iter()
        .map(|&i| data.features[i].values().to_vec())
        .collect();
    let normalizer = Normalizer::fit(&train_rows);
    let inputs: Vec<Vec<f64>> = data
        .features
        .iter()
        .map(|f| normalizer.transform(f.values()))
        .collect();
    let targets: Vec<f64> = data.labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();

    let mut layer_sizes = vec![input_dim];
    layer_sizes.extend_from_slice(&config.hidden_layers);
    layer_sizes.push(1);
    let mut net = Mlp::new(&layer_sizes, &mut rng);
    // Start the head at the label prior so an undertrained model emits the
    // base rate rather than 0.5.
    let train_prior = split
        .train
        .iter()
        .filter(|&&i| data.labels[i])
        .count() as f64
        / split.train.len() as f64;
    let prior_logit = (train_prior.clamp(1e-3, 1.0 - 1e-3)
        / (1.0 - train_prior.clamp(1e-3, 1.0 - 1e-3)))
    .ln();
    net.set_output_bias(&[prior_logit]);

    let mean_loss = |net: &Mlp, idx: &[usize]| -> f64 {
        idx.iter()
            .map(|&i| cross_entropy(sigmoid(net.forward(&inputs[i])[0]), data.labels[i]))
            .sum::<f64>()
            / idx.len() as f64
    };

    let mut learning_rate = config.learning_rate;
    let mut train_loss = mean_loss(&net, &split.train);
    let mut loss_curve = vec![train_loss];

    let mut best_net = net.clone();
    let mut best_holdout = mean_loss(&net, &split.holdout);
    let mut patience_left = config.patience;
    let mut epochs_run = 0;

    let mut order = split.train.clone();
    'epochs: for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        // Backtracking on the full-training loss keeps the recorded descent
        // monotone; a failed epoch is retried with a halved step.
        let mut accepted = false;
        for _attempt in 0..12 {
            let snapshot = net.clone();
            for batch in order.chunks(config.batch_size) {
                let mut grads = net.zero_gradients();
                for &i in batch {
                    let trace = net.forward_trace(&inputs[i]);
                    let p = sigmoid(trace.output()[0]);
                    net.backward(&trace, &[p - targets[i]], &mut grads);
                }
                net.apply_step(&grads, learning_rate / batch.len() as f64);
            }
            let new_loss = mean_loss(&net, &split.train);
            if new_loss <= train_loss + 1e-12 {
                train_loss = new_loss;
                accepted = true;
                break;
            }
            net = snapshot;
            learning_rate /= 2.0;
        }
        if !accepted {
            break 'epochs;
        }
        epochs_run += 1;
        loss_curve.push(train_loss);

        let holdout_loss = mean_loss(&net, &split.holdout);
        if holdout_loss < best_holdout - 1e-12 {
            best_holdout = holdout_loss;
            best_net = net.clone();
            patience_left = config.patience;
        } else if patience_left == 0 {
            break;
        } else {
            patience_left -= 1;
        }
    }

    let holdout_brier: f64 = split
        .holdout
        .iter()
        .map(|&i| {
            let p = clamp_open(sigmoid(best_net.forward(&inputs[i])[0]));
            (p - targets[i]) * (p - targets[i])
        })
        .sum::<f64>()
        / split.holdout.len() as f64;

    Ok(ClassifierModel {
        format: CHECKPOINT_FORMAT.into(),
        kind: ClassifierKind::Network {
            net: best_net,
            normalizer,
        },
        input_dim,
        metadata: TrainMetadata {
            epochs_run,
            seed: config.seed,
            holdout_brier,
            degenerate: false,
            train_loss_curve: loss_curve,
        },
    })
}

/// Ten-bin-style expected calibration error: bins predictions on equal-width
/// intervals of [0, 1] and averages |empirical accuracy - mean confidence|
/// weighted by bin occupancy.
pub fn expected_calibration_error(predictions: &[f64], labels: &[bool], bins: usize) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    assert!(bins > 0);
    let mut bin_count = vec![0usize; bins];
    let mut bin_conf = vec![0.0; bins];
    let mut bin_pos = vec![0usize; bins];
    for (&p, &l) in predictions.iter().zip(labels) {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        bin_count[b] += 1;
        bin_conf[b] += p;
        bin_pos[b] += l as usize;
    }
    let n = predictions.len() as f64;
    (0..bins)
        .filter(|&b| bin_count[b] > 0)
        .map(|b| {
            let count = bin_count[b] as f64;
            let acc = bin_pos[b] as f64 / count;
            let conf = bin_conf[b] / count;
            (count / n) * (acc - conf).abs()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    // Separable fixture: label is true iff the detector score exceeds 0.5.
    fn separable_set(n: usize, seed: u64) -> LabeledBoxSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let score: f64 = rng.random();
            let values = vec![
                score,
                rng.random_range(0.01..0.9),
                rng.random_range(0.0..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.0..0.5),
                1.0,
            ];
            features.push(FeatureVector::from_values(values).unwrap());
            labels.push(score > 0.5);
        }
        LabeledBoxSet {
            features,
            labels,
            num_classes: 1,
        }
    }

    #[test]
    fn learns_a_separable_rule() {
        let data = separable_set(2000, 5);
        let config = TrainConfig::new(0.25, 9);
        let model = train(&data, &config).unwrap();
        assert!(!model.metadata.degenerate);

        let eval = separable_set(800, 77);
        let correct = eval
            .features
            .iter()
            .zip(&eval.labels)
            .filter(|(f, &l)| (model.predict(f).unwrap() > 0.5) == l)
            .count();
        let accuracy = correct as f64 / eval.len() as f64;
        assert!(accuracy >= 0.98, "holdout accuracy {accuracy}");

        // A confidently-scored box gets a confident prediction.
        let confident = FeatureVector::from_values(vec![0.95, 0.4, 0.5, -0.45, 0.0, 1.0]).unwrap();
        assert!(model.predict(&confident).unwrap() > 0.9);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable_set(400, 3);
        let config = TrainConfig::new(0.2, 21);
        let a = train(&data, &config).unwrap();
        let b = train(&data, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_loss_curve_is_monotone() {
        let data = separable_set(600, 8);
        let model = train(&data, &TrainConfig::new(0.2, 4)).unwrap();
        let curve = &model.metadata.train_loss_curve;
        assert!(curve.len() >= 2);
        for pair in curve.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn single_class_data_degrades_to_prior() {
        let mut data = separable_set(100, 2);
        data.labels = vec![true; data.len()];
        let model = train(&data, &TrainConfig::new(0.2, 1)).unwrap();
        assert!(model.metadata.degenerate);
        let p = model.predict(&data.features[0]).unwrap();
        assert!(p > 0.999 && p < 1.0);
    }

    #[test]
    fn predictions_stay_strictly_inside_unit_interval() {
        let data = separable_set(500, 11);
        let model = train(&data, &TrainConfig::new(0.2, 12)).unwrap();
        for f in &data.features {
            let p = model.predict(f).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let data = separable_set(200, 13);
        let model = train(&data, &TrainConfig::new(0.2, 14)).unwrap();
        let wrong =
            FeatureVector::from_values(vec![0.5, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5]).unwrap();
        assert!(matches!(
            model.predict(&wrong),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let data = separable_set(300, 15);
        let model = train(&data, &TrainConfig::new(0.2, 16)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classifier.json");
        model.save(&path).unwrap();
        let loaded = ClassifierModel::load(&path).unwrap();
        assert_eq!(loaded, model);
    }

    // Bernoulli fixture whose true acceptance probability IS the detector
    // score; the trained model should be calibrated against it.
    fn bernoulli_set(n: usize, seed: u64) -> LabeledBoxSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let p: f64 = rng.random();
            let values = vec![
                p,
                rng.random_range(0.01..0.9),
                rng.random_range(0.0..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.0..0.5),
                1.0,
            ];
            features.push(FeatureVector::from_values(values).unwrap());
            labels.push(rng.random::<f64>() < p);
        }
        LabeledBoxSet {
            features,
            labels,
            num_classes: 1,
        }
    }

    #[test]
    fn calibrated_on_bernoulli_fixture() {
        let data = bernoulli_set(6000, 31);
        let model = train(&data, &TrainConfig::new(0.2, 32)).unwrap();

        let eval = bernoulli_set(3000, 33);
        let predictions: Vec<f64> = eval
            .features
            .iter()
            .map(|f| model.predict(f).unwrap())
            .collect();
        let ece = expected_calibration_error(&predictions, &eval.labels, 10);
        assert!(ece < 0.05, "expected calibration error {ece}");
    }

    #[test]
    fn build_training_set_labels_match_indicators() {
        use crate::geometry::{BBox, ScoredProposal};
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let exact = ScoredProposal::new(gt, 0.9).unwrap();
        // IoU 1/3 against the ground truth.
        let third =
            ScoredProposal::new(BBox::new(5.0, 0.0, 15.0, 10.0).unwrap(), 0.8).unwrap();
        let off =
            ScoredProposal::new(BBox::new(60.0, 60.0, 80.0, 80.0).unwrap(), 0.7).unwrap();
        let scene = Scene::new(
            "c".into(),
            0,
            vec![gt],
            vec![exact, third, off],
            (100.0, 100.0),
            0,
        )
        .unwrap();

        let set = build_training_set(&[scene.clone()], QualityLevel::low(), 2).unwrap();
        assert_eq!(set.labels, vec![true, false, false]);

        let lenient =
            build_training_set(&[scene], QualityLevel::new(0.3).unwrap(), 2).unwrap();
        assert_eq!(lenient.labels, vec![true, true, false]);

        assert!(build_training_set(&[], QualityLevel::low(), 2).is_err());
    }
}
