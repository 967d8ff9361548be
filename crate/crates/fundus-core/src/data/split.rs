//! Class-wise stratified train/validation splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, DatasetManifest, Domain, SplitAssignment};
use crate::util::derive_seed_idx;

/// Splits a fully annotated manifest so that each (domain, class) stratum
/// contributes `round(fraction * stratum_size)` validation images.
///
/// Deterministic: ids are sorted before a per-stratum seeded shuffle, so the
/// assignment depends only on the id set, the fraction and the seed.
pub fn stratified_split(
    manifest: &DatasetManifest,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment, DataError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DataError::BadFraction(val_fraction));
    }
    let mut strata: std::collections::BTreeMap<(Domain, bool), Vec<String>> =
        std::collections::BTreeMap::new();
    for e in &manifest.entries {
        let label = e
            .glaucoma
            .ok_or_else(|| DataError::UnannotatedEntry(e.id.clone()))?;
        strata.entry((e.domain, label)).or_default().push(e.id.clone());
    }

    let mut train_ids = std::collections::BTreeSet::new();
    let mut val_ids = std::collections::BTreeSet::new();
    for ((domain, label), mut ids) in strata {
        ids.sort();
        let stratum_tag = (domain.index() as u64) * 2 + label as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_idx(seed, "stratified-split", stratum_tag));
        ids.shuffle(&mut rng);
        let n_val = (val_fraction * ids.len() as f64).round() as usize;
        if n_val == 0 {
            log::warn!(
                "stratum (domain {}, glaucoma {}) of size {} contributes no validation images",
                domain,
                label,
                ids.len()
            );
        }
        for (i, id) in ids.into_iter().enumerate() {
            if i < n_val {
                val_ids.insert(id);
            } else {
                train_ids.insert(id);
            }
        }
    }
    Ok(SplitAssignment {
        train_ids,
        val_ids,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ManifestEntry;

    /// Builds an in-memory manifest; paths are never touched by the split.
    pub(crate) fn synthetic_manifest(spec: &[(Domain, usize, usize)]) -> DatasetManifest {
        let mut entries = Vec::new();
        for (domain, total, positives) in spec {
            for i in 0..*total {
                entries.push(ManifestEntry {
                    id: format!("d{}_{i:04}", domain.index()),
                    domain: *domain,
                    image_path: std::path::PathBuf::from(format!("mem/d{}_{i:04}.png", domain.index())),
                    mask_path: None,
                    fovea: None,
                    glaucoma: Some(i < *positives),
                });
            }
        }
        DatasetManifest { entries }
    }

    #[test]
    fn challenge_scale_strata_counts() {
        // domain 1: 400 images / 40 positive; domain 2: 800 / 80
        let manifest = synthetic_manifest(&[(Domain::D1, 400, 40), (Domain::D2, 800, 80)]);
        let split = stratified_split(&manifest, 0.1, 7).unwrap();
        assert_eq!(split.val_ids.len(), 4 + 36 + 8 + 72);
        assert_eq!(split.train_ids.len(), 1200 - 120);

        let count = |ids: &std::collections::BTreeSet<String>, domain: Domain, pos: bool| {
            manifest
                .entries
                .iter()
                .filter(|e| ids.contains(&e.id) && e.domain == domain && e.glaucoma == Some(pos))
                .count()
        };
        assert_eq!(count(&split.val_ids, Domain::D1, true), 4);
        assert_eq!(count(&split.val_ids, Domain::D1, false), 36);
        assert_eq!(count(&split.val_ids, Domain::D2, true), 8);
        assert_eq!(count(&split.val_ids, Domain::D2, false), 72);
    }

    #[test]
    fn single_stratum_plain_split() {
        let manifest = synthetic_manifest(&[(Domain::D2, 50, 0)]);
        let split = stratified_split(&manifest, 0.1, 3).unwrap();
        assert_eq!(split.val_ids.len(), 5);
        assert_eq!(split.train_ids.len(), 45);
    }

    #[test]
    fn deterministic_per_seed() {
        let manifest = synthetic_manifest(&[(Domain::D1, 40, 8), (Domain::D2, 60, 6)]);
        let a = stratified_split(&manifest, 0.1, 11).unwrap();
        let b = stratified_split(&manifest, 0.1, 11).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&manifest, 0.1, 12).unwrap();
        assert_ne!(a.val_ids, c.val_ids);
    }

    #[test]
    fn tiny_stratum_contributes_nothing() {
        let manifest = synthetic_manifest(&[(Domain::D1, 3, 1)]);
        let split = stratified_split(&manifest, 0.1, 1).unwrap();
        // round(0.1*1)=0 and round(0.1*2)=0: everything lands in train
        assert_eq!(split.val_ids.len(), 0);
        assert_eq!(split.train_ids.len(), 3);
    }

    #[test]
    fn unannotated_entry_is_rejected() {
        let mut manifest = synthetic_manifest(&[(Domain::D1, 4, 2)]);
        manifest.entries[0].glaucoma = None;
        assert!(matches!(
            stratified_split(&manifest, 0.1, 1),
            Err(DataError::UnannotatedEntry(_))
        ));
    }

    #[test]
    fn bad_fraction_is_rejected() {
        let manifest = synthetic_manifest(&[(Domain::D1, 4, 2)]);
        assert!(matches!(stratified_split(&manifest, 0.0, 1), Err(DataError::BadFraction(_))));
        assert!(matches!(stratified_split(&manifest, 1.0, 1), Err(DataError::BadFraction(_))));
    }
}
