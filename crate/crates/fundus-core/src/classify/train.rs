//! Classifier training over expanded ROI sets and TTA risk prediction.

use image::RgbImage;
use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fundus_nn::{
    loss, restore_params, snapshot_params, Adam, EarlyStopping, ParamSource, StepDecay,
};

use super::model::ClassifierNet;
use super::{inverse_frequency_weights, ClassifierConfig, ClassifyError, RiskPrediction};
use crate::augment::{
    apply, sample_transform, tta_predict, Rendering, ScoreTensor, TransformSpec, TtaConfig, TtaMode,
};
use crate::util::{derive_seed_idx, image_to_chw};

/// A labeled ROI crop.
#[derive(Debug, Clone)]
pub struct ClassifySample {
    pub id: String,
    pub image: RgbImage,
    pub glaucoma: bool,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct ClassifierHistory {
    pub epochs: Vec<ClassifierEpoch>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub class_weights: (f64, f64),
    /// Eval-mode accuracy over the unaugmented training set after restoring
    /// the best weights.
    pub final_train_accuracy: f64,
}

fn prepare_batch(
    net: &ClassifierNet,
    samples: &[&ClassifySample],
    augment: Option<(&TransformSpec, u64)>,
) -> Result<(Array4<f32>, Vec<usize>), ClassifyError> {
    let s = net.config().input_size;
    let mut batch = Array4::<f32>::zeros((samples.len(), 3, s, s));
    let mut labels = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let chw: Array3<f32> = image_to_chw(&sample.image);
        let augmented = match augment {
            Some((spec, seed_base)) => {
                let t = sample_transform(spec, seed_base.wrapping_add(i as u64));
                apply(&t, &chw, &[])?.0
            }
            None => chw,
        };
        let x = net.preprocess(&augmented);
        batch
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&x.index_axis(ndarray::Axis(0), 0));
        labels.push(sample.glaucoma as usize);
    }
    Ok((batch, labels))
}

/// Eval-mode accuracy over a sample set.
pub fn accuracy(net: &mut ClassifierNet, samples: &[ClassifySample]) -> Result<f64, ClassifyError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in samples.chunks(16) {
        let refs: Vec<&ClassifySample> = chunk.iter().collect();
        let (x, labels) = prepare_batch(net, &refs, None)?;
        let logits = net.forward(&x, false);
        for (row, &label) in logits.rows().into_iter().zip(labels.iter()) {
            let pred = if row[1] > row[0] { 1 } else { 0 };
            if pred == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Trains with Adam over the trainable (unfrozen) parameters only, weighted
/// cross-entropy, the classification augmentation recipe, step LR decay and
/// early stopping on validation loss. The network keeps the best weights.
pub fn train_classifier(
    net: &mut ClassifierNet,
    train: &[ClassifySample],
    val: &[ClassifySample],
    config: &ClassifierConfig,
) -> Result<ClassifierHistory, ClassifyError> {
    if train.is_empty() {
        return Err(ClassifyError::Train("empty training set".into()));
    }
    if val.is_empty() {
        return Err(ClassifyError::Train("empty validation set".into()));
    }
    let labels: Vec<bool> = train.iter().map(|s| s.glaucoma).collect();
    let weights = match config.class_weights {
        Some(w) => w,
        None => inverse_frequency_weights(&labels),
    };
    let weights_f32 = [weights.0 as f32, weights.1 as f32];

    let spec = TransformSpec::classifier();
    let schedule = StepDecay::new(config.learning_rate, config.lr_decay_factor, config.lr_decay_every);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut optimizer = Adam::new();
    let mut history = ClassifierHistory {
        class_weights: weights,
        ..ClassifierHistory::default()
    };
    let mut best = snapshot_params(net);

    for epoch in 1..=config.max_epochs {
        let lr = schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed_idx(config.seed, "classifier-epoch", epoch as u64));
        order.shuffle(&mut rng);

        let mut train_loss = 0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<&ClassifySample> = chunk.iter().map(|&i| &train[i]).collect();
            let seed = derive_seed_idx(config.seed, "classifier-aug", (epoch * train.len() + chunk[0]) as u64);
            let (x, labels) = prepare_batch(net, &samples, Some((&spec, seed)))?;
            let logits = net.forward(&x, true);
            let (l, grad) = loss::weighted_cross_entropy(&logits, &labels, &weights_f32);
            if !l.is_finite() {
                return Err(ClassifyError::Train(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            net.zero_grads();
            net.backward(&grad);
            optimizer.step(net, lr);
            train_loss += l;
            batches += 1;
        }
        train_loss /= batches as f64;

        let mut val_loss = 0f64;
        let mut val_batches = 0usize;
        for chunk in val.chunks(config.batch_size) {
            let refs: Vec<&ClassifySample> = chunk.iter().collect();
            let (x, labels) = prepare_batch(net, &refs, None)?;
            let logits = net.forward(&x, false);
            let (l, _) = loss::weighted_cross_entropy(&logits, &labels, &weights_f32);
            val_loss += l;
            val_batches += 1;
        }
        val_loss /= val_batches as f64;
        if !val_loss.is_finite() {
            return Err(ClassifyError::Train(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }

        history.epochs.push(ClassifierEpoch {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best = snapshot_params(net);
        }
        if stop {
            break;
        }
    }
    restore_params(net, &best);
    history.best_epoch = stopper.best_epoch;
    history.best_val_loss = stopper.best_loss();
    history.final_train_accuracy = accuracy(net, train)?;
    Ok(history)
}

/// 30-way TTA risk: mean of the ensemble's logits, softmaxed once; the
/// glaucoma probability is class index 1.
pub fn predict_glaucoma_risk(
    net: &mut ClassifierNet,
    id: &str,
    roi: &RgbImage,
    domains: &[Rendering<'_>],
    tta: &TtaConfig,
) -> Result<RiskPrediction, ClassifyError> {
    let image = image_to_chw(roi);
    let scorer = super::model::ClassifierScorer::new(net);
    let outcome = tta_predict(&scorer, &image, domains, tta, TtaMode::Classification)
        .map_err(|e| ClassifyError::Tta(e.to_string()))?;
    let p = match outcome.probs {
        ScoreTensor::Class(p) => p[1] as f64,
        _ => unreachable!("classification mode returns a class vector"),
    };
    Ok(RiskPrediction {
        id: id.to_string(),
        p_glaucoma: p,
    })
}
