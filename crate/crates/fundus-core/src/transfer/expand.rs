//! Dataset expansion: every annotated ROI is emitted in its own domain plus
//! the two others via the directional generators, tripling the set.
//! Annotations ride along untouched — translation changes appearance, not
//! geometry.

use image::RgbImage;

use super::{GanError, GeneratorSet};
use crate::data::Domain;
use crate::mask::SegMask;

/// An annotated ROI crop belonging to one source domain.
#[derive(Debug, Clone)]
pub struct RoiSample {
    pub id: String,
    pub domain: Domain,
    pub image: RgbImage,
    pub mask: Option<SegMask>,
    pub glaucoma: Option<bool>,
}

/// One expanded item: the original or a translated rendering of it.
#[derive(Debug, Clone)]
pub struct ExpandedItem {
    pub original_id: String,
    pub source_domain: Domain,
    pub rendered_domain: Domain,
    pub is_synthetic: bool,
    pub image: RgbImage,
    pub mask: Option<SegMask>,
    pub glaucoma: Option<bool>,
}

impl ExpandedItem {
    /// File stem used when persisting expanded items.
    pub fn file_stem(&self) -> String {
        format!("{}__dom{}", self.original_id, self.rendered_domain.index())
    }
}

/// Expands samples 3x: per input, the original plus one translation into
/// each other domain (emitted in ascending domain order). Masks and labels
/// are cloned byte-for-byte onto the translated copies. The generator set
/// must cover all six ordered pairs; generators are borrowed mutably only
/// for their forward activation caches.
pub fn expand_dataset(
    samples: &[RoiSample],
    gens: &mut GeneratorSet,
) -> Result<Vec<ExpandedItem>, GanError> {
    gens.validate()?;
    let mut out = Vec::with_capacity(samples.len() * 3);
    for sample in samples {
        for target in Domain::ALL {
            let (image, is_synthetic) = if target == sample.domain {
                (sample.image.clone(), false)
            } else {
                let gen = gens
                    .get_mut(sample.domain, target)
                    .ok_or(GanError::MissingGenerator((sample.domain.index(), target.index())))?;
                (gen.translate(&sample.image)?, true)
            };
            out.push(ExpandedItem {
                original_id: sample.id.clone(),
                source_domain: sample.domain,
                rendered_domain: target,
                is_synthetic,
                image,
                mask: sample.mask.clone(),
                glaucoma: sample.glaucoma,
            });
        }
    }
    Ok(out)
}
