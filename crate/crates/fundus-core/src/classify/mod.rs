//! Binary glaucoma classification on ROI crops: an inception-style backbone
//! with the lower half frozen, weighted cross-entropy, and 30-way TTA at
//! prediction time.

mod model;
mod train;

pub use model::{ClassifierNet, ClassifierScorer, FROZEN_MODULES, IMAGENET_MEAN, IMAGENET_STD};
pub use train::{predict_glaucoma_risk, train_classifier, ClassifierHistory, ClassifySample};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("pretrained weights required but not provided (set allow_random_init for tests)")]
    MissingPretrained,
    #[error("training failed: {0}")]
    Train(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] fundus_nn::NnError),
    #[error("tta failed: {0}")]
    Tta(String),
    #[error(transparent)]
    Augment(#[from] crate::augment::AugmentError),
}

/// Backbone + training hyperparameters. The freeze boundary sits after the
/// first four inception modules and the first grid-size reduction; see
/// [`FROZEN_MODULES`] for the exact layer list.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClassifierConfig {
    pub input_size: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    /// (non-glaucoma, glaucoma); `None` derives inverse-frequency weights
    /// from the training split, normalized to mean 1.
    pub class_weights: Option<(f64, f64)>,
    /// Apply the named freeze boundary (lower half non-trainable).
    pub freeze_backbone_half: bool,
    /// Base channel width of the backbone.
    pub width: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Checkpoint with pretrained backbone weights; its classification head
    /// is dropped and replaced by a fresh 2-way head.
    pub pretrained: Option<PathBuf>,
    /// Test/synthetic fallback: build with random init instead of
    /// pretrained weights.
    pub allow_random_init: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            input_size: 299,
            learning_rate: 1e-4,
            lr_decay_factor: 0.1,
            lr_decay_every: 8,
            early_stop_patience: 10,
            batch_size: 60,
            class_weights: None,
            freeze_backbone_half: true,
            width: 32,
            max_epochs: 100,
            seed: 0,
            pretrained: None,
            allow_random_init: false,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ClassifyError> {
        if self.batch_size < 1 {
            return Err(ClassifyError::BadConfig("batch size must be >= 1".into()));
        }
        if self.width < 4 || self.width % 2 != 0 {
            return Err(ClassifyError::BadConfig(format!(
                "width {} must be an even number >= 4",
                self.width
            )));
        }
        if self.input_size < 32 {
            return Err(ClassifyError::BadConfig(format!(
                "input size {} too small for the backbone",
                self.input_size
            )));
        }
        if let Some((w0, w1)) = self.class_weights {
            if w0 <= 0.0 || w1 <= 0.0 {
                return Err(ClassifyError::BadConfig("class weights must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Per-image glaucoma probability.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RiskPrediction {
    pub id: String,
    pub p_glaucoma: f64,
}

/// Inverse-class-frequency weights normalized to mean 1; equal weights when
/// a class is missing (with a warning).
pub fn inverse_frequency_weights(labels: &[bool]) -> (f64, f64) {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        log::warn!("one class is empty; falling back to equal class weights");
        return (1.0, 1.0);
    }
    let (w0, w1) = (n / neg, n / pos);
    let mean = (w0 + w1) / 2.0;
    (w0 / mean, w1 / mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_frequency_matches_one_to_nine_ratio() {
        // 10% positives: weights proportional to (1, 9), mean-1 normalized
        let labels: Vec<bool> = (0..100).map(|i| i < 10).collect();
        let (w0, w1) = inverse_frequency_weights(&labels);
        assert!((w1 / w0 - 9.0).abs() < 1e-9);
        assert!(((w0 + w1) / 2.0 - 1.0).abs() < 1e-12);
        assert!((w0 - 0.2).abs() < 1e-9 && (w1 - 1.8).abs() < 1e-9);
    }

    #[test]
    fn empty_class_falls_back_to_equal() {
        let labels = vec![false; 8];
        assert_eq!(inverse_frequency_weights(&labels), (1.0, 1.0));
    }
}
