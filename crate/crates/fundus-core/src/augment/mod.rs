//! Sampled augmentation engine shared by training and test-time augmentation.
//!
//! A [`TransformSpec`] describes ranges; [`sample_transform`] reifies one
//! concrete draw. Geometric parts (flips, then an affine about the frame
//! center, then an optional perspective) apply identically to images and
//! spatial targets; color jitter touches only the image. Flips are exact
//! axis reversals, so each warp costs a single interpolation.

mod tta;
mod warp;

pub use tta::{
    tta_predict, Rendering, ScoreModel, ScoreTensor, TraceOp, TtaConfig, TtaMode, TtaOutcome,
};
pub use warp::{affine_about_center, affine_apply, affine_invert, Affine};

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("target frame {target:?} does not match image frame {image:?}")]
    FrameMismatch {
        image: (usize, usize),
        target: (usize, usize),
    },
    #[error("transform is not invertible: {0}")]
    NotInvertible(String),
    #[error("invalid spec: {0}")]
    BadSpec(String),
}

/// Ranges for each sub-transform. Each is included independently with
/// `apply_probability` when sampling.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TransformSpec {
    pub rotation_max_deg: f64,
    pub translate_max_px: f64,
    /// Scale drawn from [1-scale_max, 1+scale_max].
    pub scale_max: f64,
    /// Hue shift drawn from [-hue_max_deg, +hue_max_deg].
    pub hue_max_deg: f64,
    /// Saturation factor drawn from [1+lo, 1+hi].
    pub saturation_range: (f64, f64),
    /// Value (HSV) factor drawn from [1+lo, 1+hi].
    pub value_range: (f64, f64),
    /// Additive brightness jitter in 8-bit intensity units.
    pub brightness_delta: f64,
    /// Contrast factor drawn from [1-contrast_max, 1+contrast_max].
    pub contrast_max: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub grey_scale: bool,
    pub perspective: bool,
    /// Corner displacement bound as a fraction of the frame side.
    pub perspective_distortion: f64,
    pub apply_probability: f64,
}

impl TransformSpec {
    /// No-op spec: everything disabled.
    pub fn identity() -> Self {
        Self {
            rotation_max_deg: 0.0,
            translate_max_px: 0.0,
            scale_max: 0.0,
            hue_max_deg: 0.0,
            saturation_range: (0.0, 0.0),
            value_range: (0.0, 0.0),
            brightness_delta: 0.0,
            contrast_max: 0.0,
            horizontal_flip: false,
            vertical_flip: false,
            grey_scale: false,
            perspective: false,
            perspective_distortion: 0.0,
            apply_probability: 0.0,
        }
    }

    /// Localization recipe: affine up to 20 deg / 100 px / 20% scale, HSV
    /// jitter, both flips, each with probability 0.5.
    pub fn localizer() -> Self {
        Self {
            rotation_max_deg: 20.0,
            translate_max_px: 100.0,
            scale_max: 0.2,
            hue_max_deg: 10.0,
            saturation_range: (-0.2, 0.5),
            value_range: (-0.3, 0.3),
            brightness_delta: 0.0,
            contrast_max: 0.0,
            horizontal_flip: true,
            vertical_flip: true,
            grey_scale: false,
            perspective: false,
            perspective_distortion: 0.0,
            apply_probability: 0.5,
        }
    }

    /// Classification recipe: affine up to 20 deg / 60 px / 20% scale,
    /// brightness/contrast/saturation/hue jitter, grey-scale, perspective
    /// and both flips, each with probability 0.5.
    pub fn classifier() -> Self {
        Self {
            rotation_max_deg: 20.0,
            translate_max_px: 60.0,
            scale_max: 0.2,
            hue_max_deg: 10.0,
            saturation_range: (-0.1, 0.1),
            value_range: (0.0, 0.0),
            brightness_delta: 10.0,
            contrast_max: 0.1,
            horizontal_flip: true,
            vertical_flip: true,
            grey_scale: true,
            perspective: true,
            perspective_distortion: 0.15,
            apply_probability: 0.5,
        }
    }

    /// Segmentation recipe: affine up to 20 deg / 60 px / 20% scale, HSV
    /// jitter, both flips, each with probability 0.5.
    pub fn segmenter() -> Self {
        Self {
            rotation_max_deg: 20.0,
            translate_max_px: 60.0,
            scale_max: 0.2,
            hue_max_deg: 10.0,
            saturation_range: (-0.2, 0.5),
            value_range: (-0.3, 0.3),
            brightness_delta: 0.0,
            contrast_max: 0.0,
            horizontal_flip: true,
            vertical_flip: true,
            grey_scale: false,
            perspective: false,
            perspective_distortion: 0.0,
            apply_probability: 0.5,
        }
    }

    /// Copy restricted to invertible geometry (for segmentation TTA):
    /// grey-scale stays (color needs no inversion), perspective is dropped.
    pub fn invertible_only(&self) -> Self {
        Self {
            perspective: false,
            grey_scale: false,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(AugmentError::BadSpec(format!(
                "probability {} not in [0,1]",
                self.apply_probability
            )));
        }
        if self.scale_max >= 1.0 || self.scale_max < 0.0 {
            return Err(AugmentError::BadSpec(format!(
                "scale_max {} must be in [0,1) to keep the affine invertible",
                self.scale_max
            )));
        }
        for (name, (lo, hi)) in [
            ("saturation", self.saturation_range),
            ("value", self.value_range),
        ] {
            if lo > hi {
                return Err(AugmentError::BadSpec(format!("{name} range ({lo},{hi}) ill-ordered")));
            }
        }
        Ok(())
    }
}

/// One color operation with its sampled parameter; the order of operations
/// is itself sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorOp {
    /// Hue shift (degrees), saturation factor, value factor in one HSV pass.
    Hsv { hue: f32, sat: f32, val: f32 },
    /// Additive brightness in [0,255] units.
    Brightness(f32),
    /// Contrast factor about the mid level 128.
    Contrast(f32),
    /// Blend toward luma; factor 1 = fully grey.
    Grey,
}

/// A sampled augmentation: exact flips, an affine about the frame center,
/// an optional perspective (classification only), and ordered color ops.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteTransform {
    pub hflip: bool,
    pub vflip: bool,
    pub angle_deg: f64,
    pub scale: f64,
    pub translate: (f64, f64),
    /// Corner displacements as frame-side fractions, when perspective drew.
    pub perspective_shift: Option<[(f64, f64); 4]>,
    pub color_ops: Vec<ColorOp>,
    pub seed: u64,
}

impl ConcreteTransform {
    pub fn identity(seed: u64) -> Self {
        Self {
            hflip: false,
            vflip: false,
            angle_deg: 0.0,
            scale: 1.0,
            translate: (0.0, 0.0),
            perspective_shift: None,
            color_ops: Vec::new(),
            seed,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.hflip
            && !self.vflip
            && self.angle_deg == 0.0
            && self.scale == 1.0
            && self.translate == (0.0, 0.0)
            && self.perspective_shift.is_none()
            && self.color_ops.is_empty()
    }

    pub fn is_geometry_identity(&self) -> bool {
        !self.hflip
            && !self.vflip
            && self.angle_deg == 0.0
            && self.scale == 1.0
            && self.translate == (0.0, 0.0)
            && self.perspective_shift.is_none()
    }

    /// The affine matrix materialized for a given (H, W) frame.
    pub fn affine(&self, frame: (usize, usize)) -> Affine {
        if self.angle_deg == 0.0 && self.scale == 1.0 && self.translate == (0.0, 0.0) {
            warp::IDENTITY_AFFINE
        } else {
            affine_about_center(self.angle_deg, self.scale, self.translate, frame)
        }
    }

    fn homography(&self, frame: (usize, usize)) -> Option<[[f64; 3]; 3]> {
        let shift = self.perspective_shift?;
        let (h, w) = frame;
        let side = (h.min(w) as f64) - 1.0;
        let src = [
            (0.0, 0.0),
            (w as f64 - 1.0, 0.0),
            (w as f64 - 1.0, h as f64 - 1.0),
            (0.0, h as f64 - 1.0),
        ];
        let mut dst = src;
        for (d, s) in dst.iter_mut().zip(shift.iter()) {
            d.0 += s.0 * side;
            d.1 += s.1 * side;
        }
        warp::homography_from_corners(&src, &dst)
    }
}

/// Spatial targets that must co-transform with the image.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialTarget {
    /// Label map, warped with nearest-neighbour sampling.
    Mask(Array2<u8>),
    /// Scalar map (heatmap / score map), warped bilinearly.
    Map(Array2<f32>),
    /// A point in pixel coordinates, mapped through the forward geometry.
    Point((f64, f64)),
}

/// Draws a concrete transform. Every sub-transform's inclusion flag and
/// parameters are drawn in a fixed order, so one seed fully determines the
/// result. Color-op order is shuffled as part of the draw.
pub fn sample_transform(spec: &TransformSpec, rng_seed: u64) -> ConcreteTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let p = spec.apply_probability;
    let mut included = |enabled: bool| -> bool {
        // draw unconditionally to keep the stream layout fixed
        let roll: f64 = rng.random_range(0.0..1.0);
        enabled && roll < p
    };

    let do_rot = included(spec.rotation_max_deg != 0.0);
    let do_trans = included(spec.translate_max_px != 0.0);
    let do_scale = included(spec.scale_max != 0.0);
    let do_hsv = included(spec.hue_max_deg != 0.0 || spec.saturation_range != (0.0, 0.0) || spec.value_range != (0.0, 0.0));
    let do_bright = included(spec.brightness_delta != 0.0);
    let do_contrast = included(spec.contrast_max != 0.0);
    let do_grey = included(spec.grey_scale);
    let do_persp = included(spec.perspective);
    let do_hflip = included(spec.horizontal_flip);
    let do_vflip = included(spec.vertical_flip);

    // one draw per parameter regardless of bounds keeps the stream fixed
    let mut uniform = |lo: f64, hi: f64| -> f64 {
        let u: f64 = rng.random_range(0.0..1.0);
        lo + u * (hi - lo)
    };
    let angle = uniform(-spec.rotation_max_deg, spec.rotation_max_deg);
    let tx = uniform(-spec.translate_max_px, spec.translate_max_px);
    let ty = uniform(-spec.translate_max_px, spec.translate_max_px);
    let sc = uniform(1.0 - spec.scale_max, 1.0 + spec.scale_max);
    let hue = uniform(-spec.hue_max_deg, spec.hue_max_deg) as f32;
    let sat = 1.0 + uniform(spec.saturation_range.0, spec.saturation_range.1) as f32;
    let val = 1.0 + uniform(spec.value_range.0, spec.value_range.1) as f32;
    let bright = uniform(-spec.brightness_delta, spec.brightness_delta) as f32;
    let contrast = 1.0 + uniform(-spec.contrast_max, spec.contrast_max) as f32;
    let mut shift = [(0.0, 0.0); 4];
    for s in shift.iter_mut() {
        s.0 = uniform(-spec.perspective_distortion, spec.perspective_distortion);
        s.1 = uniform(-spec.perspective_distortion, spec.perspective_distortion);
    }

    let mut color_ops = Vec::new();
    if do_hsv {
        color_ops.push(ColorOp::Hsv {
            hue: if spec.hue_max_deg != 0.0 { hue } else { 0.0 },
            sat: if spec.saturation_range != (0.0, 0.0) { sat } else { 1.0 },
            val: if spec.value_range != (0.0, 0.0) { val } else { 1.0 },
        });
    }
    if do_bright {
        color_ops.push(ColorOp::Brightness(bright));
    }
    if do_contrast {
        color_ops.push(ColorOp::Contrast(contrast));
    }
    if do_grey {
        color_ops.push(ColorOp::Grey);
    }
    // transformations apply in a random order
    use rand::seq::SliceRandom;
    color_ops.shuffle(&mut rng);

    ConcreteTransform {
        hflip: do_hflip,
        vflip: do_vflip,
        angle_deg: if do_rot { angle } else { 0.0 },
        scale: if do_scale { sc } else { 1.0 },
        translate: if do_trans { (tx, ty) } else { (0.0, 0.0) },
        perspective_shift: do_persp.then_some(shift),
        color_ops,
        seed: rng_seed,
    }
}

fn flip_map_f32(map: &Array2<f32>, hflip: bool, vflip: bool) -> Array2<f32> {
    let mut out = map.clone();
    if hflip {
        out.invert_axis(ndarray::Axis(1));
    }
    if vflip {
        out.invert_axis(ndarray::Axis(0));
    }
    out
}

fn flip_map_u8(map: &Array2<u8>, hflip: bool, vflip: bool) -> Array2<u8> {
    let mut out = map.clone();
    if hflip {
        out.invert_axis(ndarray::Axis(1));
    }
    if vflip {
        out.invert_axis(ndarray::Axis(0));
    }
    out
}

fn flip_point(p: (f64, f64), frame: (usize, usize), hflip: bool, vflip: bool) -> (f64, f64) {
    let (h, w) = frame;
    let x = if hflip { (w - 1) as f64 - p.0 } else { p.0 };
    let y = if vflip { (h - 1) as f64 - p.1 } else { p.1 };
    (x, y)
}

fn apply_color(image: &mut Array3<f32>, ops: &[ColorOp]) {
    for op in ops {
        match *op {
            ColorOp::Hsv { hue, sat, val } => warp::adjust_hsv(image, hue, sat, val),
            ColorOp::Brightness(delta) => image.mapv_inplace(|v| (v + delta).clamp(0.0, 255.0)),
            ColorOp::Contrast(factor) => {
                image.mapv_inplace(|v| ((v - 128.0) * factor + 128.0).clamp(0.0, 255.0))
            }
            ColorOp::Grey => {
                let (_, h, w) = image.dim();
                for y in 0..h {
                    for x in 0..w {
                        let luma = 0.299 * image[(0, y, x)]
                            + 0.587 * image[(1, y, x)]
                            + 0.114 * image[(2, y, x)];
                        for c in 0..3 {
                            image[(c, y, x)] = luma;
                        }
                    }
                }
            }
        }
    }
}

/// Applies the transform to a (3, H, W) image in [0, 255] and its spatial
/// targets. Geometry order: flips, affine, perspective; color last, image
/// only. Masks use nearest-neighbour sampling, maps bilinear; points map
/// through the same forward geometry.
pub fn apply(
    t: &ConcreteTransform,
    image: &Array3<f32>,
    targets: &[SpatialTarget],
) -> Result<(Array3<f32>, Vec<SpatialTarget>), AugmentError> {
    let (_, h, w) = image.dim();
    let frame = (h, w);
    for target in targets {
        let tdim = match target {
            SpatialTarget::Mask(m) => Some(m.dim()),
            SpatialTarget::Map(m) => Some(m.dim()),
            SpatialTarget::Point(_) => None,
        };
        if let Some(tdim) = tdim {
            if tdim != frame {
                return Err(AugmentError::FrameMismatch { image: frame, target: tdim });
            }
        }
    }
    let affine = t.affine(frame);
    let homography = t.homography(frame);

    let warp_f32 = |map: &Array2<f32>| -> Array2<f32> {
        let mut out = flip_map_f32(map, t.hflip, t.vflip);
        out = warp::warp_map_affine(&out, &affine);
        if let Some(hm) = &homography {
            out = warp::warp_map_homography(&out, hm);
        }
        out
    };

    let mut channels = Vec::with_capacity(3);
    for c in 0..3 {
        let plane = image.index_axis(ndarray::Axis(0), c).to_owned();
        channels.push(warp_f32(&plane));
    }
    let mut out_image = Array3::<f32>::zeros((3, h, w));
    for (c, plane) in channels.into_iter().enumerate() {
        out_image.index_axis_mut(ndarray::Axis(0), c).assign(&plane);
    }
    apply_color(&mut out_image, &t.color_ops);

    let mut out_targets = Vec::with_capacity(targets.len());
    for target in targets {
        out_targets.push(match target {
            SpatialTarget::Map(m) => SpatialTarget::Map(warp_f32(m)),
            SpatialTarget::Mask(m) => {
                let mut out = flip_map_u8(m, t.hflip, t.vflip);
                out = warp::warp_labels_affine(&out, &affine);
                if let Some(hm) = &homography {
                    // nearest-neighbour homography for labels
                    let inv = warp::homography_invert(hm)
                        .ok_or_else(|| AugmentError::NotInvertible("degenerate perspective".into()))?;
                    let (hh, ww) = out.dim();
                    let src = out.clone();
                    for y in 0..hh {
                        for x in 0..ww {
                            let (sx, sy) = warp::homography_apply(&inv, (x as f64, y as f64));
                            let iy = sy.round().clamp(0.0, (hh - 1) as f64) as usize;
                            let ix = sx.round().clamp(0.0, (ww - 1) as f64) as usize;
                            out[(y, x)] = src[(iy, ix)];
                        }
                    }
                }
                SpatialTarget::Mask(out)
            }
            SpatialTarget::Point(p) => {
                let mut q = flip_point(*p, frame, t.hflip, t.vflip);
                q = affine_apply(&affine, q);
                if let Some(hm) = &homography {
                    q = warp::homography_apply(hm, q);
                }
                SpatialTarget::Point(q)
            }
        });
    }
    Ok((out_image, out_targets))
}

/// Undoes the geometric part of a transform on per-class score maps
/// (C, H, W): inverse affine first, then the flips. Color never touches
/// score maps, and perspective transforms are rejected (segmentation TTA is
/// restricted to invertible affine + flips).
pub fn invert_geometric(
    t: &ConcreteTransform,
    maps: &Array3<f32>,
) -> Result<Array3<f32>, AugmentError> {
    if t.perspective_shift.is_some() {
        return Err(AugmentError::NotInvertible(
            "perspective transforms are excluded from score-map inversion".into(),
        ));
    }
    let (c, h, w) = maps.dim();
    let affine = t.affine((h, w));
    let det = warp::affine_det(&affine);
    if det.abs() < 1e-9 {
        return Err(AugmentError::NotInvertible(format!("affine determinant {det}")));
    }
    let inv = affine_invert(&affine);
    let mut out = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        let plane = maps.index_axis(ndarray::Axis(0), ci).to_owned();
        let unwarped = warp::warp_map_affine(&plane, &inv);
        let unflipped = flip_map_f32(&unwarped, t.hflip, t.vflip);
        out.index_axis_mut(ndarray::Axis(0), ci).assign(&unflipped);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
