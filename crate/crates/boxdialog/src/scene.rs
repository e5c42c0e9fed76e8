//! Annotation tasks: synthetic scenes with ground truth and surrogate-detector
//! proposals, a direct-probability mode for exact oracle tests, and ingestion
//! of external detection dumps.
//!
//! A [`SceneLayout`] is the latent part of a task (ground-truth boxes, class,
//! per-scene seed). [`realize_proposals`] turns a layout into a [`Scene`] for a
//! given [`DetectorModel`]; calling it again with a stronger detector reuses
//! the same noise draws, so proposal quality improves because the detector
//! improved, not because the dice were rerolled.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, BBox, ScoredProposal};

/// One image-class annotation task: ground-truth boxes plus score-sorted,
/// NMS-suppressed detector proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image_id: String,
    pub class_id: usize,
    pub gt_boxes: Vec<BBox>,
    /// Post-NMS proposals in non-increasing score order.
    pub proposals: Vec<ScoredProposal>,
    pub image_extent: (f64, f64),
    /// Seed for per-episode randomness derived from this scene.
    pub scene_seed: u64,
}

impl Scene {
    pub fn new(
        image_id: String,
        class_id: usize,
        gt_boxes: Vec<BBox>,
        proposals: Vec<ScoredProposal>,
        image_extent: (f64, f64),
        scene_seed: u64,
    ) -> Result<Self> {
        if gt_boxes.is_empty() {
            return Err(Error::Config(format!(
                "scene {image_id} has no ground-truth boxes"
            )));
        }
        if proposals.windows(2).any(|w| w[0].score < w[1].score) {
            return Err(Error::Config(format!(
                "scene {image_id} proposals are not sorted by descending score"
            )));
        }
        Ok(Self {
            image_id,
            class_id,
            gt_boxes,
            proposals,
            image_extent,
            scene_seed,
        })
    }

    pub fn num_proposals(&self) -> usize {
        self.proposals.len()
    }
}

/// Test-mode task where the per-proposal acceptance probabilities are known
/// by construction instead of arising from geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliScene {
    pub acceptance_probs: Vec<f64>,
    pub class_id: usize,
    pub scene_seed: u64,
}

impl BernoulliScene {
    pub fn new(acceptance_probs: Vec<f64>, class_id: usize, scene_seed: u64) -> Result<Self> {
        for &p in &acceptance_probs {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidProbability(p));
            }
        }
        Ok(Self {
            acceptance_probs,
            class_id,
            scene_seed,
        })
    }
}

/// Parametric stand-in for a trained object detector. A single strength
/// scalar governs proposal quality; it grows with the amount of training
/// data via [`update_detector`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub strength: f64,
    /// Scale of box jitter relative to object size, applied times (1 - skill).
    pub localization_noise: f64,
    /// Std of additive score noise, applied times (1 - skill).
    pub score_noise: f64,
    /// Per-class multiplier on strength.
    pub per_class_skill: Vec<f64>,
    /// Number of annotated boxes this detector has been trained on.
    pub trained_on: usize,
    /// Saturation ceiling for strength updates.
    pub strength_ceiling: f64,
    /// Box count at which an update covers 1 - 1/e of the remaining gap.
    pub strength_scale_boxes: f64,
}

impl DetectorModel {
    pub fn new(strength: f64, num_classes: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(Error::Config(format!(
                "detector strength {strength} outside [0, 1]"
            )));
        }
        Ok(Self {
            strength,
            localization_noise: 0.7,
            score_noise: 0.55,
            per_class_skill: vec![1.0; num_classes.max(1)],
            trained_on: 0,
            strength_ceiling: 0.95,
            strength_scale_boxes: 500.0,
        })
    }

    /// Effective skill for a class: strength scaled by the per-class
    /// multiplier, clamped to [0, 1].
    pub fn skill_for(&self, class_id: usize) -> f64 {
        let mult = self.per_class_skill.get(class_id).copied().unwrap_or(1.0);
        (self.strength * mult).clamp(0.0, 1.0)
    }
}

/// Returns a copy of `detector` after training on `new_boxes` additional
/// annotated boxes. Strength saturates toward the ceiling:
/// `s' = s_max - (s_max - s) * exp(-new_boxes / scale)`.
///
/// Sequential updates compose exactly: updating on `a` then `b` boxes equals
/// one update on `a + b`.
pub fn update_detector(detector: &DetectorModel, new_boxes: usize) -> DetectorModel {
    let mut updated = detector.clone();
    if new_boxes == 0 {
        return updated;
    }
    let s_max = detector.strength_ceiling;
    let decay = (-(new_boxes as f64) / detector.strength_scale_boxes).exp();
    updated.strength = s_max - (s_max - detector.strength) * decay;
    updated.trained_on = detector.trained_on + new_boxes;
    updated
}

/// Knobs of [`realize_proposals`], split out so retraining loops can
/// regenerate proposals without dragging the whole scenario config along.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalParams {
    pub nms_threshold: f64,
    pub max_proposals: usize,
    /// Mean number of distractor boxes per scene (Poisson).
    pub clutter: f64,
    /// Detection samples generated per ground-truth object before NMS.
    pub proposals_per_object: usize,
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self {
            nms_threshold: 0.5,
            max_proposals: 10,
            clutter: 3.0,
            proposals_per_object: 3,
        }
    }
}

/// Full description of a synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_scenes: usize,
    pub num_classes: usize,
    /// Inclusive range of ground-truth objects per scene.
    pub objects_per_scene: (usize, usize),
    /// Object side length as a fraction of the smaller image dimension.
    pub object_size_range: (f64, f64),
    /// Per-scene multiplier on detector noise: a spread above and below 1
    /// makes some scenes easy and some cluttered-hard for every detector.
    pub difficulty_range: (f64, f64),
    pub image_extent: (f64, f64),
    pub seed: u64,
    #[serde(flatten)]
    pub proposals: ProposalParams,
}

impl ScenarioConfig {
    pub fn new(num_scenes: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            num_scenes,
            num_classes,
            objects_per_scene: (1, 3),
            object_size_range: (0.15, 0.55),
            difficulty_range: (0.4, 1.6),
            image_extent: (640.0, 480.0),
            seed,
            proposals: ProposalParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_scenes == 0 {
            return Err(Error::Config("num_scenes must be positive".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if self.objects_per_scene.0 == 0 || self.objects_per_scene.0 > self.objects_per_scene.1 {
            return Err(Error::Config(format!(
                "objects_per_scene range {:?} invalid",
                self.objects_per_scene
            )));
        }
        let (lo, hi) = self.object_size_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "object_size_range {:?} invalid",
                self.object_size_range
            )));
        }
        let (dlo, dhi) = self.difficulty_range;
        if !(0.0 <= dlo && dlo <= dhi) || !dhi.is_finite() {
            return Err(Error::Config(format!(
                "difficulty_range {:?} invalid",
                self.difficulty_range
            )));
        }
        if self.image_extent.0 <= 0.0 || self.image_extent.1 <= 0.0 {
            return Err(Error::Config("image_extent must be positive".into()));
        }
        if !(0.0 < self.proposals.nms_threshold && self.proposals.nms_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "nms_threshold {} outside (0, 1]",
                self.proposals.nms_threshold
            )));
        }
        if self.proposals.max_proposals == 0 || self.proposals.proposals_per_object == 0 {
            return Err(Error::Config(
                "max_proposals and proposals_per_object must be positive".into(),
            ));
        }
        if self.proposals.clutter < 0.0 {
            return Err(Error::Config("clutter must be non-negative".into()));
        }
        Ok(())
    }
}

/// The latent, detector-independent part of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub image_id: String,
    pub class_id: usize,
    pub gt_boxes: Vec<BBox>,
    pub image_extent: (f64, f64),
    /// Scene-level multiplier on detector noise.
    pub difficulty: f64,
    pub scene_seed: u64,
}

/// Generates the latent layouts of a scenario, deterministically in the seed.
pub fn generate_layouts(config: &ScenarioConfig) -> Result<Vec<SceneLayout>> {
    config.validate()?;
    let (width, height) = config.image_extent;
    let min_extent = width.min(height);
    let mut layouts = Vec::with_capacity(config.num_scenes);
    for index in 0..config.num_scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(index as u64);
        let class_id = rng.random_range(0..config.num_classes);
        let num_objects = rng.random_range(config.objects_per_scene.0..=config.objects_per_scene.1);
        let mut gt_boxes = Vec::with_capacity(num_objects);
        for _ in 0..num_objects {
            let size = rng.random_range(config.object_size_range.0..=config.object_size_range.1)
                * min_extent;
            let aspect: f64 = rng.random_range(0.6..=1.6);
            let w = (size * aspect.sqrt()).min(width * 0.95);
            let h = (size / aspect.sqrt()).min(height * 0.95);
            let x0 = rng.random_range(0.0..=(width - w));
            let y0 = rng.random_range(0.0..=(height - h));
            gt_boxes.push(BBox::new(x0, y0, x0 + w, y0 + h).expect("generated box is valid"));
        }
        let difficulty =
            rng.random_range(config.difficulty_range.0..=config.difficulty_range.1);
        let scene_seed = rng.next_u64();
        layouts.push(SceneLayout {
            image_id: format!("scene-{index:06}"),
            class_id,
            gt_boxes,
            image_extent: config.image_extent,
            difficulty,
            scene_seed,
        });
    }
    Ok(layouts)
}

/// Monotone map from true box quality (max IoU with ground truth) to a
/// noise-free detector score.
fn score_calibration(quality: f64) -> f64 {
    0.1 + 0.85 * quality.powf(1.5)
}

// Shifts an interval into [0, extent], preserving its length. Exact no-op
// when the interval is already inside.
fn shift_interval(lo: f64, hi: f64, extent: f64) -> (f64, f64) {
    if lo < 0.0 {
        (0.0, hi - lo)
    } else if hi > extent {
        ((lo - (hi - extent)).max(0.0), extent)
    } else {
        (lo, hi)
    }
}

/// Runs the surrogate detector on a layout.
///
/// Ground-truth boxes are jittered by Gaussian noise scaled by
/// `(1 - skill) * localization_noise`, uniformly placed distractors are added,
/// and scores are a calibrated function of true IoU plus noise scaled by
/// `(1 - skill)`. The same layout and detector always yield the same scene,
/// and a stronger detector shrinks the very same noise draws.
pub fn realize_proposals(
    layout: &SceneLayout,
    detector: &DetectorModel,
    params: &ProposalParams,
) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(layout.scene_seed);
    rng.set_stream(1);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let skill = detector.skill_for(layout.class_id);
    let weakness = (1.0 - skill) * layout.difficulty;
    let (width, height) = layout.image_extent;
    let min_extent = width.min(height);

    // Candidate boxes. All random material is drawn in a fixed order that
    // does not depend on detector parameters, so a stronger detector scales
    // the same draws instead of resampling.
    let mut candidates: Vec<BBox> = Vec::new();
    for gt in &layout.gt_boxes {
        for _ in 0..params.proposals_per_object {
            let zx: f64 = normal.sample(&mut rng);
            let zy: f64 = normal.sample(&mut rng);
            let zw: f64 = normal.sample(&mut rng);
            let zh: f64 = normal.sample(&mut rng);
            let jitter = weakness * detector.localization_noise;
            let dx = zx * jitter * gt.width();
            let dy = zy * jitter * gt.height();
            // Corner-based arithmetic: with zero jitter every term below is
            // exactly 0.0, so the proposal reproduces the ground-truth box
            // bit for bit.
            let new_w = (gt.width() * (zw * jitter * 0.5).exp()).clamp(2.0, width);
            let new_h = (gt.height() * (zh * jitter * 0.5).exp()).clamp(2.0, height);
            let half_dw = (new_w - gt.width()) / 2.0;
            let half_dh = (new_h - gt.height()) / 2.0;
            let (x0, x1) =
                shift_interval(gt.x_min + dx - half_dw, gt.x_max + dx + half_dw, width);
            let (y0, y1) =
                shift_interval(gt.y_min + dy - half_dh, gt.y_max + dy + half_dh, height);
            candidates.push(BBox::new(x0, y0, x1, y1).expect("jittered box is valid"));
        }
    }
    let num_distractors = if params.clutter > 0.0 {
        Poisson::new(params.clutter)
            .expect("positive clutter")
            .sample(&mut rng) as usize
    } else {
        0
    };
    for _ in 0..num_distractors {
        let size = rng.random_range(0.08..=0.5) * min_extent;
        let aspect: f64 = rng.random_range(0.5..=2.0);
        let w = (size * aspect.sqrt()).clamp(2.0, width * 0.95);
        let h = (size / aspect.sqrt()).clamp(2.0, height * 0.95);
        let x0 = rng.random_range(0.0..=(width - w));
        let y0 = rng.random_range(0.0..=(height - h));
        candidates.push(BBox::new(x0, y0, x0 + w, y0 + h).expect("distractor box is valid"));
    }

    let scored: Vec<ScoredProposal> = candidates
        .into_iter()
        .map(|bbox| {
            let quality = geometry::max_iou(&bbox, &layout.gt_boxes);
            let noise: f64 = normal.sample(&mut rng);
            let score = (score_calibration(quality) + noise * weakness * detector.score_noise)
                .clamp(0.0, 1.0);
            ScoredProposal { bbox, score }
        })
        .collect();

    let mut proposals = geometry::nms(&scored, params.nms_threshold);
    proposals.truncate(params.max_proposals);

    Scene {
        image_id: layout.image_id.clone(),
        class_id: layout.class_id,
        gt_boxes: layout.gt_boxes.clone(),
        proposals,
        image_extent: layout.image_extent,
        scene_seed: layout.scene_seed,
    }
}

/// Generates a full scenario: layouts plus proposals from `detector`.
pub fn generate_scenes(config: &ScenarioConfig, detector: &DetectorModel) -> Result<Vec<Scene>> {
    let layouts = generate_layouts(config)?;
    Ok(layouts
        .iter()
        .map(|layout| realize_proposals(layout, detector, &config.proposals))
        .collect())
}

/// Builds direct-probability test scenes carrying exactly the given
/// acceptance vectors.
pub fn make_bernoulli_batch(specs: &[Vec<f64>], seed: u64) -> Result<Vec<BernoulliScene>> {
    specs
        .iter()
        .enumerate()
        .map(|(index, probs)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            BernoulliScene::new(probs.clone(), 0, rng.next_u64())
        })
        .collect()
}

/// One line of the detection-dump interchange format.
#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    image_id: String,
    class_id: usize,
    width: f64,
    height: f64,
    gt: Vec<[f64; 4]>,
    proposals: Vec<[f64; 5]>,
    nms_applied: bool,
}

/// Scenes loaded from a detection dump, plus any normalization warnings.
#[derive(Debug)]
pub struct LoadedScenes {
    pub scenes: Vec<Scene>,
    pub warnings: Vec<String>,
}

/// Reads a JSON-lines detection dump. Records that are not yet suppressed get
/// NMS applied at `nms_threshold`; out-of-order scores are sorted with a
/// warning recorded for the run report.
pub fn load_detections(path: &Path, nms_threshold: f64) -> Result<LoadedScenes> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut scenes = Vec::new();
    let mut warnings = Vec::new();
    for (line_index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = line_index + 1;
        let record: DetectionRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let gt_boxes: Vec<BBox> = record
            .gt
            .iter()
            .map(|&[x0, y0, x1, y1]| {
                BBox::new(x0, y0, x1, y1).map_err(|e| Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        let mut proposals: Vec<ScoredProposal> = record
            .proposals
            .iter()
            .map(|&[x0, y0, x1, y1, score]| {
                BBox::new(x0, y0, x1, y1)
                    .and_then(|bbox| ScoredProposal::new(bbox, score))
                    .map_err(|e| Error::Parse {
                        line: line_no,
                        message: e.to_string(),
                    })
            })
            .collect::<Result<_>>()?;
        if proposals.windows(2).any(|w| w[0].score < w[1].score) {
            warnings.push(format!(
                "line {line_no} ({}): proposals out of score order, sorted",
                record.image_id
            ));
            proposals.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        }
        if !record.nms_applied {
            proposals = geometry::nms(&proposals, nms_threshold);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(line_no as u64);
        rng.set_stream(u64::MAX);
        let scene = Scene::new(
            record.image_id,
            record.class_id,
            gt_boxes,
            proposals,
            (record.width, record.height),
            rng.next_u64(),
        )
        .map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        scenes.push(scene);
    }
    Ok(LoadedScenes { scenes, warnings })
}

/// Writes scenes in the JSON-lines detection-dump format.
pub fn save_detections(path: &Path, scenes: &[Scene]) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    for scene in scenes {
        let record = DetectionRecord {
            image_id: scene.image_id.clone(),
            class_id: scene.class_id,
            width: scene.image_extent.0,
            height: scene.image_extent.1,
            gt: scene
                .gt_boxes
                .iter()
                .map(|b| [b.x_min, b.y_min, b.x_max, b.y_max])
                .collect(),
            proposals: scene
                .proposals
                .iter()
                .map(|p| [p.bbox.x_min, p.bbox.y_min, p.bbox.x_max, p.bbox.y_max, p.score])
                .collect(),
            nms_applied: true,
        };
        serde_json::to_writer(&mut writer, &record)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Smallest one-hot length covering every class id in `scenes`.
pub fn num_classes_in(scenes: &[Scene]) -> usize {
    scenes.iter().map(|s| s.class_id + 1).max().unwrap_or(1)
}
