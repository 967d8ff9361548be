//! Localizer training (Adam, step LR decay, early stopping) and inference.

use image::RgbImage;
use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fundus_nn::{loss, restore_params, snapshot_params, Adam, EarlyStopping, ParamSource, StepDecay};

use crate::augment::{apply, sample_transform, SpatialTarget, TransformSpec};
use crate::data::{map_coords, FundusImage};
use crate::util::{derive_seed_idx, image_to_chw, resize_rgb, stack_batch};

use super::{
    decode_heatmap, encode_heatmap, HeatmapError, HeatmapPair, HourglassConfig, HourglassNet,
    LocalizationResult,
};

/// One training example at heatmap resolution: the image in [0, 255] and its
/// two target maps.
#[derive(Debug, Clone)]
pub struct LocalizerSample {
    pub id: String,
    pub image: Array3<f32>,
    pub targets: HeatmapPair,
}

/// Resizes a fundus image to the heatmap frame and encodes its cup-center
/// and fovea annotations as peak-normalized Gaussians.
pub fn prepare_localizer_sample(
    image: &FundusImage,
    config: &HourglassConfig,
) -> Result<LocalizerSample, HeatmapError> {
    let s = config.input_size;
    let (w, h) = image.dims();
    let fovea = image.fovea.ok_or_else(|| HeatmapError::MissingAnnotation {
        id: image.id.clone(),
        msg: "fovea".into(),
    })?;
    let cup = image.cup_center.ok_or_else(|| HeatmapError::MissingAnnotation {
        id: image.id.clone(),
        msg: "cup center (needs a segmentation mask)".into(),
    })?;
    let fovea_s = map_coords(fovea, (h, w), (s as u32, s as u32))?;
    let cup_s = map_coords(cup, (h, w), (s as u32, s as u32))?;
    let clamp = |p: (f64, f64)| (p.0.min((s - 1) as f64), p.1.min((s - 1) as f64));
    let pair = HeatmapPair {
        cup: encode_heatmap(clamp(cup_s), config.gaussian_variance, (s, s))?,
        fovea: encode_heatmap(clamp(fovea_s), config.gaussian_variance, (s, s))?,
    };
    let resized = resize_rgb(&image.pixels, s as u32, s as u32);
    Ok(LocalizerSample {
        id: image.id.clone(),
        image: image_to_chw(&resized),
        targets: pair,
    })
}

/// Per-epoch training record.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct LocalizerHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

fn batch_tensors(
    samples: &[&LocalizerSample],
    augment: Option<(&TransformSpec, u64)>,
) -> Result<(Array4<f32>, Array4<f32>), HeatmapError> {
    let mut images = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let (image, cup, fovea) = match augment {
            Some((spec, seed_base)) => {
                let t = sample_transform(spec, seed_base.wrapping_add(i as u64));
                let (img, warped) = apply(
                    &t,
                    &sample.image,
                    &[
                        SpatialTarget::Map(sample.targets.cup.clone()),
                        SpatialTarget::Map(sample.targets.fovea.clone()),
                    ],
                )?;
                let cup = match &warped[0] {
                    SpatialTarget::Map(m) => m.clone(),
                    _ => unreachable!(),
                };
                let fovea = match &warped[1] {
                    SpatialTarget::Map(m) => m.clone(),
                    _ => unreachable!(),
                };
                (img, cup, fovea)
            }
            None => (
                sample.image.clone(),
                sample.targets.cup.clone(),
                sample.targets.fovea.clone(),
            ),
        };
        images.push(image.mapv(|v| v / 255.0));
        let (s0, s1) = cup.dim();
        let mut t = Array3::<f32>::zeros((2, s0, s1));
        t.index_axis_mut(ndarray::Axis(0), 0).assign(&cup);
        t.index_axis_mut(ndarray::Axis(0), 1).assign(&fovea);
        targets.push(t);
    }
    Ok((stack_batch(&images), stack_batch(&targets)))
}

/// Intermediate-supervision loss: MSE per stack, summed over stacks.
fn stacked_mse(outputs: &[Array4<f32>], target: &Array4<f32>) -> (f64, Vec<Array4<f32>>) {
    let mut total = 0f64;
    let mut grads = Vec::with_capacity(outputs.len());
    for out in outputs {
        let (l, g) = loss::mse(out, target);
        total += l;
        grads.push(g);
    }
    (total, grads)
}

/// Trains the localizer with the per-recipe augmentation, returning the
/// history; the network is left holding the best-validation weights.
pub fn train_localizer(
    net: &mut HourglassNet,
    train: &[LocalizerSample],
    val: &[LocalizerSample],
    config: &HourglassConfig,
) -> Result<LocalizerHistory, HeatmapError> {
    if train.is_empty() {
        return Err(HeatmapError::Train("empty training set".into()));
    }
    if val.is_empty() {
        return Err(HeatmapError::Train("empty validation set".into()));
    }
    let spec = TransformSpec::localizer();
    let schedule = StepDecay::new(config.learning_rate, config.lr_decay_factor, config.lr_decay_every);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut optimizer = Adam::new();
    let mut history = LocalizerHistory::default();
    let mut best_snapshot = snapshot_params(net);

    for epoch in 1..=config.max_epochs {
        let lr = schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed_idx(config.seed, "localizer-epoch", epoch as u64));
        order.shuffle(&mut rng);

        let mut train_loss = 0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<&LocalizerSample> = chunk.iter().map(|&i| &train[i]).collect();
            let aug_seed = derive_seed_idx(config.seed, "localizer-aug", (epoch * train.len() + chunk[0]) as u64);
            let (x, target) = batch_tensors(&samples, Some((&spec, aug_seed)))?;
            let outputs = net.forward(&x, true);
            let (l, grads) = stacked_mse(&outputs, &target);
            if !l.is_finite() {
                return Err(HeatmapError::Train(format!(
                    "non-finite training loss {l} at epoch {epoch}"
                )));
            }
            net.zero_grads();
            net.backward(&grads);
            optimizer.step(net, lr);
            train_loss += l;
            batches += 1;
        }
        train_loss /= batches as f64;

        let mut val_loss = 0f64;
        let mut val_batches = 0usize;
        for chunk in (0..val.len()).collect::<Vec<_>>().chunks(config.batch_size) {
            let samples: Vec<&LocalizerSample> = chunk.iter().map(|&i| &val[i]).collect();
            let (x, target) = batch_tensors(&samples, None)?;
            let outputs = net.forward(&x, false);
            let (l, _) = stacked_mse(&outputs, &target);
            val_loss += l;
            val_batches += 1;
        }
        val_loss /= val_batches as f64;
        if !val_loss.is_finite() {
            return Err(HeatmapError::Train(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }

        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best_snapshot = snapshot_params(net);
        }
        if stop {
            break;
        }
    }
    restore_params(net, &best_snapshot);
    history.best_epoch = stopper.best_epoch;
    history.best_val_loss = stopper.best_loss();
    Ok(history)
}

/// Full inference path: resize to the heatmap frame, normalize to [0, 1],
/// forward, decode the final stack, and map both peaks back to native
/// resolution.
pub fn locate(net: &mut HourglassNet, image: &RgbImage) -> Result<LocalizationResult, HeatmapError> {
    let s = net.config().input_size;
    let (w, h) = image.dimensions();
    let resized = resize_rgb(image, s as u32, s as u32);
    let x = image_to_chw(&resized).mapv(|v| v / 255.0);
    let mut batch = Array4::<f32>::zeros((1, 3, s, s));
    batch.index_axis_mut(ndarray::Axis(0), 0).assign(&x);
    let outputs = net.forward(&batch, false);
    let last = outputs.last().expect("at least one stack");
    let cup_map = last
        .index_axis(ndarray::Axis(0), 0)
        .index_axis(ndarray::Axis(0), 0)
        .to_owned();
    let fovea_map = last
        .index_axis(ndarray::Axis(0), 0)
        .index_axis(ndarray::Axis(0), 1)
        .to_owned();
    let cup_peak = decode_heatmap(&cup_map)?;
    let fovea_peak = decode_heatmap(&fovea_map)?;
    let to_native = |p: (usize, usize)| {
        map_coords((p.0 as f64, p.1 as f64), (s as u32, s as u32), (h, w))
    };
    Ok(LocalizationResult {
        fovea: to_native(fovea_peak.point)?,
        cup_center: to_native(cup_peak.point)?,
        peak_values: (cup_peak.value, fovea_peak.value),
        degenerate: cup_peak.degenerate || fovea_peak.degenerate,
    })
}
