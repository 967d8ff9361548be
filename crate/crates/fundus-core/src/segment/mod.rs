//! Optic disc / cup segmentation: a U-Net over ROI crops, 30-way TTA with
//! inverse-transformed proposal averaging, connected-component cleanup,
//! paste-back to native resolution, and cup-to-disc ratio extraction.

mod model;
mod train;

pub use model::{SegmenterScorer, UNet};
pub use train::{segment, train_segmenter, SegOutcome, SegSample, SegmenterHistory};

use ndarray::Array2;
use thiserror::Error;

use crate::mask::{MaskClass, MaskResolution, SegMask};

#[derive(Debug, Error)]
pub enum SegError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("training failed: {0}")]
    Train(String),
    #[error("mask contains label {0} outside the background/disc/cup alphabet")]
    BadLabel(u8),
    #[error("empty disc: cup-to-disc ratio undefined")]
    EmptyDisc,
    #[error("tta failed: {0}")]
    Tta(String),
    #[error(transparent)]
    Augment(#[from] crate::augment::AugmentError),
}

/// U-Net and training hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SegConfig {
    pub input_size: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    /// Base channel width of the first encoder level.
    pub width: usize,
    /// Number of pooling levels.
    pub depth: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Largest-component / cup-containment cleanup after argmax.
    pub postprocess: bool,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            input_size: 256,
            learning_rate: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_every: 50,
            early_stop_patience: 10,
            batch_size: 8,
            width: 16,
            depth: 3,
            max_epochs: 200,
            seed: 0,
            postprocess: true,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<(), SegError> {
        if self.input_size % (1 << self.depth) != 0 {
            return Err(SegError::BadConfig(format!(
                "input size {} not divisible by 2^depth = {}",
                self.input_size,
                1 << self.depth
            )));
        }
        if self.batch_size < 1 || self.width < 2 {
            return Err(SegError::BadConfig("batch size and width must be positive".into()));
        }
        Ok(())
    }
}

/// Vertical cup and disc diameters and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CdrValue {
    pub vertical_cup_diameter: f64,
    pub vertical_disc_diameter: f64,
    pub ratio: f64,
}

/// Vertical diameter of a pixel set: the maximum over columns of
/// (last_row - first_row + 1).
fn vertical_diameter(member: impl Fn(u8) -> bool, labels: &Array2<u8>) -> f64 {
    let (h, w) = labels.dim();
    let mut best = 0usize;
    for x in 0..w {
        let mut first = None;
        let mut last = 0usize;
        for y in 0..h {
            if member(labels[(y, x)]) {
                if first.is_none() {
                    first = Some(y);
                }
                last = y;
            }
        }
        if let Some(f) = first {
            best = best.max(last - f + 1);
        }
    }
    best as f64
}

/// Cup-to-disc ratio by the vertical-diameter convention. The anatomical
/// disc is the union of disc and cup labels. An empty cup gives ratio 0;
/// an empty disc is an error.
pub fn compute_cdr(mask: &SegMask) -> Result<CdrValue, SegError> {
    mask.validate_alphabet().map_err(SegError::BadLabel)?;
    let disc = vertical_diameter(|l| l == MaskClass::Disc as u8 || l == MaskClass::Cup as u8, &mask.labels);
    if disc == 0.0 {
        return Err(SegError::EmptyDisc);
    }
    let cup = vertical_diameter(|l| l == MaskClass::Cup as u8, &mask.labels);
    Ok(CdrValue {
        vertical_cup_diameter: cup,
        vertical_disc_diameter: disc,
        ratio: cup / disc,
    })
}

/// 4-connected components of a boolean grid; returns (labels, component
/// sizes) with label 0 reserved for background.
fn connected_components(mask: &Array2<bool>) -> (Array2<u32>, Vec<usize>) {
    let (h, w) = mask.dim();
    let mut labels = Array2::<u32>::zeros((h, w));
    let mut sizes = vec![0usize]; // index 0 unused
    let mut stack = Vec::new();
    let mut next = 1u32;
    for sy in 0..h {
        for sx in 0..w {
            if !mask[(sy, sx)] || labels[(sy, sx)] != 0 {
                continue;
            }
            let mut size = 0usize;
            stack.push((sy, sx));
            labels[(sy, sx)] = next;
            while let Some((y, x)) = stack.pop() {
                size += 1;
                let mut visit = |ny: usize, nx: usize| {
                    if mask[(ny, nx)] && labels[(ny, nx)] == 0 {
                        labels[(ny, nx)] = next;
                        stack.push((ny, nx));
                    }
                };
                if y > 0 {
                    visit(y - 1, x);
                }
                if y + 1 < h {
                    visit(y + 1, x);
                }
                if x > 0 {
                    visit(y, x - 1);
                }
                if x + 1 < w {
                    visit(y, x + 1);
                }
            }
            sizes.push(size);
            next += 1;
        }
    }
    (labels, sizes)
}

fn largest_component(mask: &Array2<bool>) -> Option<Array2<bool>> {
    let (labels, sizes) = connected_components(mask);
    let best = sizes
        .iter()
        .enumerate()
        .skip(1)
        .max_by_key(|(_, &s)| s)
        .map(|(i, _)| i as u32)?;
    Some(labels.mapv(|l| l == best))
}

/// Cleanup of an argmax mask: the anatomical disc becomes its largest
/// connected component, the cup its largest component inside that support,
/// and disc pixels are whatever support remains. Returns the cleaned mask
/// and whether the disc came out empty.
pub fn postprocess_mask(mask: &SegMask) -> (SegMask, bool) {
    let support = mask.disc_support();
    let Some(disc_cc) = largest_component(&support) else {
        return (
            SegMask::filled(mask.dims().0, mask.dims().1, MaskClass::Background, mask.resolution),
            true,
        );
    };
    let cup_in_support = ndarray::Zip::from(&mask.labels)
        .and(&disc_cc)
        .map_collect(|&l, &inside| inside && l == MaskClass::Cup as u8);
    let cup_cc = largest_component(&cup_in_support);
    let mut labels = Array2::<u8>::zeros(mask.dims());
    for ((y, x), &inside) in disc_cc.indexed_iter() {
        if inside {
            let is_cup = cup_cc.as_ref().map(|c| c[(y, x)]).unwrap_or(false);
            labels[(y, x)] = if is_cup { MaskClass::Cup as u8 } else { MaskClass::Disc as u8 };
        }
    }
    (SegMask::new(labels, mask.resolution), false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_mask(h: usize, w: usize, cy: i64, cx: i64, r_disc: i64, r_cup: i64) -> SegMask {
        let mut labels = Array2::<u8>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as i64 - cy).pow(2) + (x as i64 - cx).pow(2);
                if d2 <= r_cup * r_cup {
                    labels[(y, x)] = 2;
                } else if d2 <= r_disc * r_disc {
                    labels[(y, x)] = 1;
                }
            }
        }
        SegMask::new(labels, MaskResolution::Native)
    }

    #[test]
    fn concentric_circles_give_pixel_quantized_ratio() {
        let mask = circle_mask(128, 128, 64, 64, 50, 25);
        let cdr = compute_cdr(&mask).unwrap();
        // rasterized diameters are 2r+1
        assert_eq!(cdr.vertical_disc_diameter, 101.0);
        assert_eq!(cdr.vertical_cup_diameter, 51.0);
        assert!((cdr.ratio - 51.0 / 101.0).abs() < 1e-12);
        assert!((cdr.ratio - 0.505).abs() < 0.001);
    }

    #[test]
    fn cup_equals_disc_gives_ratio_one() {
        let mut mask = circle_mask(64, 64, 32, 32, 20, 20);
        // everything inside r=20 is cup; no disc-only ring
        assert!(mask.labels.iter().all(|&l| l != 1));
        let cdr = compute_cdr(&mask).unwrap();
        assert_eq!(cdr.ratio, 1.0);
        // and an explicit all-disc-as-cup variant
        mask.labels.mapv_inplace(|l| if l == 1 { 2 } else { l });
        assert_eq!(compute_cdr(&mask).unwrap().ratio, 1.0);
    }

    #[test]
    fn empty_cup_gives_ratio_zero() {
        let mask = circle_mask(64, 64, 32, 32, 20, 0);
        let cdr = compute_cdr(&mask).unwrap();
        assert_eq!(cdr.vertical_cup_diameter, 1.0); // r=0 rasterizes one pixel
        let mask2 = {
            let mut m = mask.clone();
            m.labels.mapv_inplace(|l| if l == 2 { 1 } else { l });
            m
        };
        let cdr2 = compute_cdr(&mask2).unwrap();
        assert_eq!(cdr2.vertical_cup_diameter, 0.0);
        assert_eq!(cdr2.ratio, 0.0);
    }

    #[test]
    fn empty_disc_is_an_error() {
        let mask = SegMask::filled(16, 16, MaskClass::Background, MaskResolution::Native);
        assert!(matches!(compute_cdr(&mask), Err(SegError::EmptyDisc)));
    }

    #[test]
    fn cdr_scale_invariant_within_tolerance() {
        let small = circle_mask(128, 128, 64, 64, 55, 30);
        let big = circle_mask(384, 384, 192, 192, 165, 90);
        let a = compute_cdr(&small).unwrap().ratio;
        let b = compute_cdr(&big).unwrap().ratio;
        assert!((a - b).abs() <= 0.02, "{a} vs {b}");
    }

    #[test]
    fn postprocess_keeps_largest_component_and_clips_cup() {
        let mut mask = circle_mask(96, 96, 48, 48, 25, 12);
        // speckle: a stray disc blob and a stray cup pixel outside the disc
        mask.labels[(5, 5)] = 1;
        mask.labels[(90, 90)] = 2;
        let (clean, empty) = postprocess_mask(&mask);
        assert!(!empty);
        assert_eq!(clean.labels[(5, 5)], 0);
        assert_eq!(clean.labels[(90, 90)], 0);
        // cup still inside disc support, single components each
        let (_, sizes) = connected_components(&clean.disc_support());
        assert_eq!(sizes.len() - 1, 1);
        let cup_only = clean.labels.mapv(|l| l == 2);
        let (_, cup_sizes) = connected_components(&cup_only);
        assert_eq!(cup_sizes.len() - 1, 1);
    }

    #[test]
    fn postprocess_flags_empty_disc() {
        let mask = SegMask::filled(32, 32, MaskClass::Background, MaskResolution::Roi(32));
        let (clean, empty) = postprocess_mask(&mask);
        assert!(empty);
        assert_eq!(clean.count(MaskClass::Background), 32 * 32);
    }
}
