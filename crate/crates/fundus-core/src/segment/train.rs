//! Segmenter training (per-pixel cross-entropy) and the full TTA inference
//! path ending in a native-resolution mask.

use image::RgbImage;
use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fundus_nn::{
    loss, restore_params, snapshot_params, Adam, EarlyStopping, ParamSource, StepDecay,
};

use super::model::{SegmenterScorer, UNet};
use super::{postprocess_mask, SegConfig, SegError};
use crate::augment::{
    apply, sample_transform, tta_predict, Rendering, ScoreTensor, SpatialTarget, TransformSpec,
    TtaConfig, TtaMode,
};
use crate::data::CropRecord;
use crate::mask::{MaskResolution, SegMask};
use crate::util::{derive_seed_idx, image_to_chw, resize_labels};

/// One (ROI image, ROI mask) training pair.
#[derive(Debug, Clone)]
pub struct SegSample {
    pub id: String,
    pub image: RgbImage,
    pub mask: SegMask,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SegmenterEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct SegmenterHistory {
    pub epochs: Vec<SegmenterEpoch>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Inference outcome: native-resolution mask plus the averaged per-class
/// probability maps at model resolution.
#[derive(Debug, Clone)]
pub struct SegOutcome {
    pub native_mask: SegMask,
    pub probabilities: Array3<f32>,
    pub disc_empty: bool,
}

fn prepare_batch(
    net: &UNet,
    samples: &[&SegSample],
    augment: Option<(&TransformSpec, u64)>,
) -> Result<(Array4<f32>, ndarray::Array3<u8>), SegError> {
    let s = net.config().input_size;
    let mut images = Array4::<f32>::zeros((samples.len(), 3, s, s));
    let mut labels = ndarray::Array3::<u8>::zeros((samples.len(), s, s));
    for (i, sample) in samples.iter().enumerate() {
        sample.mask.validate_alphabet().map_err(SegError::BadLabel)?;
        let chw = image_to_chw(&sample.image);
        let (mh, mw) = sample.mask.dims();
        let (_, ih, iw) = chw.dim();
        if (mh, mw) != (ih, iw) {
            return Err(SegError::Train(format!(
                "sample {} mask {}x{} does not match image {}x{}",
                sample.id, mw, mh, iw, ih
            )));
        }
        // joint geometric augmentation at native ROI resolution, then resize
        let (image, mask) = match augment {
            Some((spec, seed_base)) => {
                let t = sample_transform(spec, seed_base.wrapping_add(i as u64));
                let (img, warped) =
                    apply(&t, &chw, &[SpatialTarget::Mask(sample.mask.labels.clone())])?;
                let mask = match &warped[0] {
                    SpatialTarget::Mask(m) => m.clone(),
                    _ => unreachable!(),
                };
                (img, mask)
            }
            None => (chw, sample.mask.labels.clone()),
        };
        let x = net.preprocess(&image);
        images
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&x.index_axis(ndarray::Axis(0), 0));
        let resized = resize_labels(&mask, s, s);
        labels.index_axis_mut(ndarray::Axis(0), i).assign(&resized);
    }
    Ok((images, labels))
}

/// Trains with unweighted per-pixel cross-entropy, the segmentation
/// augmentation recipe applied jointly to image and mask, step LR decay and
/// early stopping. The network keeps the best-validation weights.
pub fn train_segmenter(
    net: &mut UNet,
    train: &[SegSample],
    val: &[SegSample],
    config: &SegConfig,
) -> Result<SegmenterHistory, SegError> {
    if train.is_empty() {
        return Err(SegError::Train("empty training set".into()));
    }
    if val.is_empty() {
        return Err(SegError::Train("empty validation set".into()));
    }
    let spec = TransformSpec::segmenter();
    let schedule = StepDecay::new(config.learning_rate, config.lr_decay_factor, config.lr_decay_every);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut optimizer = Adam::new();
    let mut history = SegmenterHistory::default();
    let mut best = snapshot_params(net);

    for epoch in 1..=config.max_epochs {
        let lr = schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed_idx(config.seed, "segmenter-epoch", epoch as u64));
        order.shuffle(&mut rng);

        let mut train_loss = 0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<&SegSample> = chunk.iter().map(|&i| &train[i]).collect();
            let seed = derive_seed_idx(config.seed, "segmenter-aug", (epoch * train.len() + chunk[0]) as u64);
            let (x, labels) = prepare_batch(net, &samples, Some((&spec, seed)))?;
            let scores = net.forward(&x, true);
            let (l, grad) = loss::pixel_cross_entropy(&scores, &labels);
            if !l.is_finite() {
                return Err(SegError::Train(format!("non-finite training loss at epoch {epoch}")));
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
            let refs: Vec<&SegSample> = chunk.iter().collect();
            let (x, labels) = prepare_batch(net, &refs, None)?;
            let scores = net.forward(&x, false);
            let (l, _) = loss::pixel_cross_entropy(&scores, &labels);
            val_loss += l;
            val_batches += 1;
        }
        val_loss /= val_batches as f64;
        if !val_loss.is_finite() {
            return Err(SegError::Train(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }

        history.epochs.push(SegmenterEpoch {
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
    Ok(history)
}

/// Full inference: TTA-averaged probabilities, per-pixel argmax, optional
/// component cleanup, nearest resize to the ROI size, and paste-back into a
/// background-filled native canvas through the crop record.
pub fn segment(
    net: &mut UNet,
    roi: &RgbImage,
    domains: &[Rendering<'_>],
    tta: &TtaConfig,
    crop_record: &CropRecord,
) -> Result<SegOutcome, SegError> {
    let config = net.config().clone();
    let image = image_to_chw(roi);
    let scorer = SegmenterScorer::new(net);
    let outcome = tta_predict(&scorer, &image, domains, tta, TtaMode::Segmentation)
        .map_err(|e| SegError::Tta(e.to_string()))?;
    let probs = match outcome.probs {
        ScoreTensor::Map(m) => m,
        _ => unreachable!("segmentation mode returns a map"),
    };
    let (c, h, w) = probs.dim();
    debug_assert_eq!(c, 3);
    let mut labels = ndarray::Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut best = 0u8;
            let mut best_v = probs[(0, y, x)];
            for ci in 1..c {
                if probs[(ci, y, x)] > best_v {
                    best_v = probs[(ci, y, x)];
                    best = ci as u8;
                }
            }
            labels[(y, x)] = best;
        }
    }
    let mask = SegMask::new(labels, MaskResolution::Roi(config.input_size as u32));
    let (mask, disc_empty) = if config.postprocess {
        postprocess_mask(&mask)
    } else {
        let empty = mask_is_disc_empty(&mask);
        (mask, empty)
    };
    let roi_size = crop_record.size as usize;
    let roi_mask = SegMask::new(
        resize_labels(&mask.labels, roi_size, roi_size),
        MaskResolution::Roi(crop_record.size),
    );
    let native_mask = crop_record.paste_mask(&roi_mask);
    Ok(SegOutcome {
        native_mask,
        probabilities: probs,
        disc_empty,
    })
}

fn mask_is_disc_empty(mask: &SegMask) -> bool {
    !mask.disc_support().iter().any(|&v| v)
}
