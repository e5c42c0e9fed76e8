//! The per-box feature vector fed to the acceptance classifier and the
//! Q-network: detector score, relative box size, score statistics of the
//! whole proposal list, and a one-hot class encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Scene;

/// Number of scalar features before the class one-hot block.
pub const BASE_FEATURES: usize = 5;

/// Feature vector of one proposal. Layout: `[detector_score,
/// relative_box_size, mean_class_score, mean_minus_score, max_minus_score,
/// one-hot class...]`, `5 + num_classes` entries in total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() <= BASE_FEATURES {
            return Err(Error::DimensionMismatch {
                expected: BASE_FEATURES + 1,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("feature values must be finite".into()));
        }
        let onehot_sum: f64 = values[BASE_FEATURES..].iter().sum();
        if (onehot_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config("class one-hot must sum to one".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn num_classes(&self) -> usize {
        self.values.len() - BASE_FEATURES
    }

    pub fn detector_score(&self) -> f64 {
        self.values[0]
    }

    pub fn relative_box_size(&self) -> f64 {
        self.values[1]
    }

    pub fn mean_class_score(&self) -> f64 {
        self.values[2]
    }

    pub fn mean_minus_score(&self) -> f64 {
        self.values[3]
    }

    pub fn max_minus_score(&self) -> f64 {
        self.values[4]
    }

    pub fn class_onehot(&self) -> &[f64] {
        &self.values[BASE_FEATURES..]
    }
}

/// Extracts the feature vector of one proposal.
pub fn extract_features(
    scene: &Scene,
    proposal_index: usize,
    num_classes: usize,
) -> Result<FeatureVector> {
    let proposal = scene
        .proposals
        .get(proposal_index)
        .ok_or(Error::IndexOutOfRange {
            index: proposal_index,
            len: scene.proposals.len(),
        })?;
    if scene.class_id >= num_classes {
        return Err(Error::Config(format!(
            "class id {} outside one-hot width {num_classes}",
            scene.class_id
        )));
    }
    let score = proposal.score;
    let image_area = scene.image_extent.0 * scene.image_extent.1;
    let relative_size = proposal.bbox.area() / image_area;
    let mean_score: f64 = scene.proposals.iter().map(|p| p.score).sum::<f64>()
        / scene.proposals.len() as f64;
    let max_score = scene
        .proposals
        .iter()
        .map(|p| p.score)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut values = Vec::with_capacity(BASE_FEATURES + num_classes);
    values.push(score);
    values.push(relative_size);
    values.push(mean_score);
    values.push(mean_score - score);
    values.push(max_score - score);
    for class in 0..num_classes {
        values.push(if class == scene.class_id { 1.0 } else { 0.0 });
    }
    FeatureVector::from_values(values)
}
