//! Experiment configuration: TOML file plus command-line overrides, resolved
//! into fully explicit settings. Every run writes its resolved configuration
//! next to its outputs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use boxdialog::annotator::{ActionTimings, QualityLevel};
use boxdialog::classifier::TrainConfig;
use boxdialog::cost::PlanOrdering;
use boxdialog::episode::StrategySpec;
use boxdialog::retrain::BatchSchedule;
use boxdialog::rl::RlTrainConfig;
use boxdialog::scene::{DetectorModel, ScenarioConfig};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    /// "slow", "fast", or "verify_s,draw_s".
    pub timings: Option<String>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub rl: RlSection,
    #[serde(default)]
    pub retrain: RetrainSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// "weak" or "strong"; explicit fields below override the preset.
    pub preset: Option<String>,
    pub num_scenes: Option<usize>,
    pub num_classes: Option<usize>,
    pub strength: Option<f64>,
    pub localization_noise: Option<f64>,
    pub score_noise: Option<f64>,
    pub objects_per_scene: Option<(usize, usize)>,
    pub object_size_range: Option<(f64, f64)>,
    pub difficulty_range: Option<(f64, f64)>,
    pub clutter: Option<f64>,
    pub nms_threshold: Option<f64>,
    pub max_proposals: Option<usize>,
    pub proposals_per_object: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub strategies: Option<Vec<String>>,
    pub folds: Option<usize>,
    /// "score" or "sorted-p".
    pub ordering: Option<String>,
    /// Optional detection dump to annotate instead of generated scenes.
    pub scenes_file: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    pub hidden_layers: Option<Vec<usize>>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub holdout_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlSection {
    pub epsilon: Option<f64>,
    pub batch_size: Option<usize>,
    pub training_iterations: Option<usize>,
    pub buffer_capacity: Option<usize>,
    pub learning_rate: Option<f64>,
    pub target_sync_period: Option<usize>,
    pub hidden_layers: Option<Vec<usize>>,
    pub episodes_per_iteration: Option<usize>,
    pub validation_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainSection {
    /// "vertical", "horizontal", or "drawing".
    pub regime: Option<String>,
    pub schedule: Option<Vec<f64>>,
    pub horizontal_iterations: Option<usize>,
    pub accumulate: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub seed: u64,
    pub quality: QualityLevel,
    pub timings: ActionTimings,
    pub workers: usize,
    pub scenario: ScenarioConfig,
    pub detector: DetectorModel,
    pub strategies: Vec<StrategySpec>,
    pub strategy_names: Vec<String>,
    pub folds: usize,
    pub scenes_file: Option<String>,
    pub classifier: TrainConfig,
    pub rl: RlTrainConfig,
    pub regime: String,
    pub schedule: BatchSchedule,
    pub horizontal_iterations: usize,
    pub accumulate: bool,
}

pub fn parse_timings(spec: &str) -> Result<ActionTimings> {
    match spec {
        "slow" => Ok(ActionTimings::classic_drawing()),
        "fast" => Ok(ActionTimings::extreme_clicking()),
        other => {
            let parts: Vec<&str> = other.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                bail!("timings must be \"slow\", \"fast\", or \"verify_s,draw_s\", got {other:?}");
            }
            let verify_s: f64 = parts[0].parse().context("parsing verify seconds")?;
            let draw_s: f64 = parts[1].parse().context("parsing draw seconds")?;
            Ok(ActionTimings::new(verify_s, draw_s)?)
        }
    }
}

pub fn parse_ordering(spec: &str) -> Result<PlanOrdering> {
    match spec {
        "score" => Ok(PlanOrdering::DetectorScore),
        "sorted-p" => Ok(PlanOrdering::SortedByProb),
        other => bail!("ordering must be \"score\" or \"sorted-p\", got {other:?}"),
    }
}

pub fn parse_strategy(name: &str, ordering: PlanOrdering) -> Result<StrategySpec> {
    match name {
        "D" => Ok(StrategySpec::Draw),
        "V*D" => Ok(StrategySpec::VerifyAll),
        "prob" => Ok(StrategySpec::ProbPlanner { ordering }),
        "rl" => Ok(StrategySpec::QPolicy),
        "lower-bound" => Ok(StrategySpec::Clairvoyant),
        other => {
            if let Some(m) = other
                .strip_prefix('V')
                .and_then(|s| s.strip_suffix('D'))
                .and_then(|s| s.parse::<usize>().ok())
            {
                return Ok(StrategySpec::FixedSeries(m));
            }
            bail!(
                "unknown strategy {other:?}; expected D, V<m>D, V*D, prob, rl, or lower-bound"
            )
        }
    }
}

const DEFAULT_STRATEGIES: &[&str] = &["D", "V1D", "V2D", "V3D", "V*D", "prob", "lower-bound"];

pub fn resolve(
    file: &FileConfig,
    seed_flag: Option<u64>,
    alpha_flag: Option<f64>,
    timings_flag: Option<&str>,
    strategies_flag: &[String],
    folds_flag: Option<usize>,
    ordering_flag: Option<&str>,
    workers_flag: Option<usize>,
) -> Result<Resolved> {
    let seed = seed_flag.or(file.seed).unwrap_or(1);
    let alpha = alpha_flag.or(file.alpha).unwrap_or(0.7);
    let quality = QualityLevel::new(alpha)?;
    let timings_spec = timings_flag
        .map(str::to_string)
        .or_else(|| file.timings.clone())
        .unwrap_or_else(|| "fast".into());
    let timings = parse_timings(&timings_spec)?;
    let workers = workers_flag.or(file.workers).unwrap_or(0);

    // Scenario: preset base, then explicit overrides.
    let s = &file.scenario;
    let preset = s.preset.as_deref().unwrap_or("weak");
    let (base_strength, base_scenes) = match preset {
        "weak" => (0.3, 2000),
        "strong" => (0.8, 2000),
        other => bail!("unknown scenario preset {other:?}; expected \"weak\" or \"strong\""),
    };
    let num_scenes = s.num_scenes.unwrap_or(base_scenes);
    let num_classes = s.num_classes.unwrap_or(3);
    let mut scenario = ScenarioConfig::new(num_scenes, num_classes, seed);
    if let Some(v) = s.objects_per_scene {
        scenario.objects_per_scene = v;
    }
    if let Some(v) = s.object_size_range {
        scenario.object_size_range = v;
    }
    if let Some(v) = s.difficulty_range {
        scenario.difficulty_range = v;
    }
    if let Some(v) = s.clutter {
        scenario.proposals.clutter = v;
    }
    if let Some(v) = s.nms_threshold {
        scenario.proposals.nms_threshold = v;
    }
    if let Some(v) = s.max_proposals {
        scenario.proposals.max_proposals = v;
    }
    if let Some(v) = s.proposals_per_object {
        scenario.proposals.proposals_per_object = v;
    }
    scenario.validate()?;

    let mut detector = DetectorModel::new(s.strength.unwrap_or(base_strength), num_classes)?;
    if let Some(v) = s.localization_noise {
        detector.localization_noise = v;
    }
    if let Some(v) = s.score_noise {
        detector.score_noise = v;
    }

    let ordering_spec = ordering_flag
        .map(str::to_string)
        .or_else(|| file.run.ordering.clone())
        .unwrap_or_else(|| "score".into());
    let ordering = parse_ordering(&ordering_spec)?;

    let strategy_names: Vec<String> = if !strategies_flag.is_empty() {
        strategies_flag.to_vec()
    } else {
        file.run.strategies.clone().unwrap_or_else(|| {
            DEFAULT_STRATEGIES.iter().map(|s| s.to_string()).collect()
        })
    };
    let strategies = strategy_names
        .iter()
        .map(|name| parse_strategy(name, ordering))
        .collect::<Result<Vec<_>>>()?;

    let folds = folds_flag.or(file.run.folds).unwrap_or(10);

    let mut classifier = TrainConfig::new(0.2, seed);
    let c = &file.classifier;
    if let Some(v) = &c.hidden_layers {
        classifier.hidden_layers = v.clone();
    }
    if let Some(v) = c.learning_rate {
        classifier.learning_rate = v;
    }
    if let Some(v) = c.batch_size {
        classifier.batch_size = v;
    }
    if let Some(v) = c.max_epochs {
        classifier.max_epochs = v;
    }
    if let Some(v) = c.patience {
        classifier.patience = v;
    }
    if let Some(v) = c.holdout_fraction {
        classifier.holdout_fraction = v;
    }

    let mut rl = RlTrainConfig::new(seed);
    let r = &file.rl;
    if let Some(v) = r.epsilon {
        rl.epsilon = v;
    }
    if let Some(v) = r.batch_size {
        rl.batch_size = v;
    }
    if let Some(v) = r.training_iterations {
        rl.training_iterations = v;
    }
    if let Some(v) = r.buffer_capacity {
        rl.buffer_capacity = v;
    }
    if let Some(v) = r.learning_rate {
        rl.learning_rate = v;
    }
    if let Some(v) = r.target_sync_period {
        rl.target_sync_period = v;
    }
    if let Some(v) = &r.hidden_layers {
        rl.hidden_layers = v.clone();
    }
    if let Some(v) = r.episodes_per_iteration {
        rl.episodes_per_iteration = v;
    }
    if let Some(v) = r.validation_fraction {
        rl.validation_fraction = v;
    }

    let regime = file
        .retrain
        .regime
        .clone()
        .unwrap_or_else(|| "vertical".into());
    if !["vertical", "horizontal", "drawing"].contains(&regime.as_str()) {
        bail!("unknown retrain regime {regime:?}");
    }
    let schedule = match &file.retrain.schedule {
        Some(fractions) => BatchSchedule::new(fractions.clone())?,
        None => BatchSchedule::doubling(),
    };

    Ok(Resolved {
        seed,
        quality,
        timings,
        workers,
        scenario,
        detector,
        strategies,
        strategy_names,
        folds,
        scenes_file: file.run.scenes_file.clone(),
        classifier,
        rl,
        regime,
        horizontal_iterations: file.retrain.horizontal_iterations.unwrap_or(5),
        accumulate: file.retrain.accumulate.unwrap_or(false),
        schedule,
    })
}

/// Serializes the resolved settings back into the file format for embedding
/// in the output directory.
pub fn resolved_to_toml(resolved: &Resolved) -> String {
    let echo = FileConfig {
        seed: Some(resolved.seed),
        alpha: Some(resolved.quality.alpha()),
        timings: Some(format!(
            "{},{}",
            resolved.timings.verify_s, resolved.timings.draw_s
        )),
        workers: Some(resolved.workers),
        scenario: ScenarioSection {
            preset: None,
            num_scenes: Some(resolved.scenario.num_scenes),
            num_classes: Some(resolved.scenario.num_classes),
            strength: Some(resolved.detector.strength),
            localization_noise: Some(resolved.detector.localization_noise),
            score_noise: Some(resolved.detector.score_noise),
            objects_per_scene: Some(resolved.scenario.objects_per_scene),
            object_size_range: Some(resolved.scenario.object_size_range),
            difficulty_range: Some(resolved.scenario.difficulty_range),
            clutter: Some(resolved.scenario.proposals.clutter),
            nms_threshold: Some(resolved.scenario.proposals.nms_threshold),
            max_proposals: Some(resolved.scenario.proposals.max_proposals),
            proposals_per_object: Some(resolved.scenario.proposals.proposals_per_object),
        },
        run: RunSection {
            strategies: Some(resolved.strategy_names.clone()),
            folds: Some(resolved.folds),
            ordering: None,
            scenes_file: resolved.scenes_file.clone(),
        },
        classifier: ClassifierSection {
            hidden_layers: Some(resolved.classifier.hidden_layers.clone()),
            learning_rate: Some(resolved.classifier.learning_rate),
            batch_size: Some(resolved.classifier.batch_size),
            max_epochs: Some(resolved.classifier.max_epochs),
            patience: Some(resolved.classifier.patience),
            holdout_fraction: Some(resolved.classifier.holdout_fraction),
        },
        rl: RlSection {
            epsilon: Some(resolved.rl.epsilon),
            batch_size: Some(resolved.rl.batch_size),
            training_iterations: Some(resolved.rl.training_iterations),
            buffer_capacity: Some(resolved.rl.buffer_capacity),
            learning_rate: Some(resolved.rl.learning_rate),
            target_sync_period: Some(resolved.rl.target_sync_period),
            hidden_layers: Some(resolved.rl.hidden_layers.clone()),
            episodes_per_iteration: Some(resolved.rl.episodes_per_iteration),
            validation_fraction: Some(resolved.rl.validation_fraction),
        },
        retrain: RetrainSection {
            regime: Some(resolved.regime.clone()),
            schedule: Some(resolved.schedule.fractions().to_vec()),
            horizontal_iterations: Some(resolved.horizontal_iterations),
            accumulate: Some(resolved.accumulate),
        },
    };
    toml::to_string_pretty(&echo).expect("resolved config serializes")
}
