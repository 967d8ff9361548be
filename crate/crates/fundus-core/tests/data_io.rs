//! Directory-layout loading and manifest/split CSV round-trips.

use std::path::Path;

use fundus_core::data::{load_manifest, stratified_split, DataError, Layout, LoadOptions};
use fundus_core::{DatasetManifest, Domain};
use image::RgbImage;

fn write_image(path: &Path, w: u32, h: u32) {
    let img = RgbImage::from_pixel(w, h, image::Rgb([40, 20, 10]));
    img.save(path).unwrap();
}

/// Builds a challenge-layout tree with the real camera dimensions.
fn build_challenge_root(root: &Path, counts: [usize; 3]) {
    for (di, &count) in counts.iter().enumerate() {
        let domain = Domain::ALL[di];
        let (w, h) = domain.expected_dims();
        let dom = root.join(format!("domain{}", domain.index()));
        std::fs::create_dir_all(dom.join("images")).unwrap();
        let annotated = domain != Domain::D3;
        let mut fovea = String::from("id,fovea_x,fovea_y\n");
        let mut labels = String::from("id,glaucoma\n");
        for i in 0..count {
            let id = format!("d{}_{i:03}", domain.index());
            write_image(&dom.join("images").join(format!("{id}.png")), w, h);
            if annotated {
                fovea.push_str(&format!("{id},{}.5,{}.5\n", 100 + i, 200 + i));
                labels.push_str(&format!("{id},{}\n", i % 10 == 0) );
            }
        }
        if annotated {
            std::fs::write(dom.join("fovea.csv"), fovea.replace("true", "1").replace("false", "0")).unwrap();
            std::fs::write(dom.join("labels.csv"), labels.replace("true", "1").replace("false", "0")).unwrap();
        }
    }
}

#[test]
fn challenge_layout_counts_and_domains() {
    let dir = tempfile::tempdir().unwrap();
    // scaled-down stand-in for the 400+800 train / 400 test release
    build_challenge_root(dir.path(), [4, 8, 4]);
    let manifest = load_manifest(dir.path(), Layout::Challenge, &LoadOptions::default()).unwrap();
    assert_eq!(manifest.len(), 16);
    let census = manifest.domain_census();
    assert_eq!(census[&Domain::D1], 4);
    assert_eq!(census[&Domain::D2], 8);
    assert_eq!(census[&Domain::D3], 4);
    // training domains carry annotations, the test domain does not
    assert!(manifest.entries.iter().filter(|e| e.domain != Domain::D3).all(|e| e.is_annotated()));
    assert!(manifest.entries.iter().filter(|e| e.domain == Domain::D3).all(|e| !e.is_annotated()));
    assert_eq!(manifest.annotated().len(), 12);
}

#[test]
fn empty_directory_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = load_manifest(dir.path(), Layout::Flat, &LoadOptions::default()).unwrap();
    assert!(manifest.is_empty());
    let manifest = load_manifest(dir.path(), Layout::Challenge, &LoadOptions::default()).unwrap();
    assert!(manifest.is_empty());
}

#[test]
fn missing_root_is_an_error() {
    let err = load_manifest(Path::new("/nonexistent/xyz"), Layout::Flat, &LoadOptions::default());
    assert!(matches!(err, Err(DataError::MissingDirectory(_))));
}

#[test]
fn flat_layout_infers_domain_from_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..5 {
        write_image(&dir.path().join(format!("img{i}.png")), 1634, 1634);
    }
    let manifest = load_manifest(dir.path(), Layout::Flat, &LoadOptions::default()).unwrap();
    assert_eq!(manifest.len(), 5);
    assert!(manifest.entries.iter().all(|e| e.domain == Domain::D2));
}

#[test]
fn unknown_dimensions_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    write_image(&dir.path().join("odd.png"), 640, 480);
    let err = load_manifest(dir.path(), Layout::Flat, &LoadOptions::default());
    match err {
        Err(DataError::AmbiguousDomain { path, w: 640, h: 480 }) => {
            assert!(path.ends_with("odd.png"));
        }
        other => panic!("expected AmbiguousDomain, got {other:?}"),
    }
}

#[test]
fn dimension_mismatch_rejected_unless_permissive() {
    let dir = tempfile::tempdir().unwrap();
    let dom = dir.path().join("domain1").join("images");
    std::fs::create_dir_all(&dom).unwrap();
    write_image(&dom.join("small.png"), 320, 320);
    let strict = load_manifest(dir.path(), Layout::Challenge, &LoadOptions::default());
    assert!(matches!(strict, Err(DataError::DimensionMismatch { .. })));
    let permissive = load_manifest(
        dir.path(),
        Layout::Challenge,
        &LoadOptions { permissive_dims: true },
    )
    .unwrap();
    assert_eq!(permissive.len(), 1);
    assert_eq!(permissive.entries[0].domain, Domain::D1);
}

#[test]
fn manifest_csv_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    build_challenge_root(dir.path(), [2, 2, 1]);
    let manifest = load_manifest(dir.path(), Layout::Challenge, &LoadOptions::default()).unwrap();
    let csv = dir.path().join("manifest.csv");
    manifest.save_csv(&csv).unwrap();
    let back = DatasetManifest::load_csv(&csv).unwrap();
    assert_eq!(back.len(), manifest.len());
    for (a, b) in manifest.entries.iter().zip(back.entries.iter()) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.domain, b.domain);
        assert_eq!(a.image_path, b.image_path);
        assert_eq!(a.fovea, b.fovea);
        assert_eq!(a.glaucoma, b.glaucoma);
    }
}

#[test]
fn split_csv_roundtrip_and_union() {
    let dir = tempfile::tempdir().unwrap();
    build_challenge_root(dir.path(), [3, 5, 0]);
    let manifest = load_manifest(dir.path(), Layout::Challenge, &LoadOptions::default()).unwrap();
    let annotated = manifest.annotated();
    let split = stratified_split(&annotated, 0.25, 5).unwrap();
    // union is exactly the annotated id set, train/val disjoint
    let mut union: Vec<&String> = split.train_ids.iter().chain(split.val_ids.iter()).collect();
    union.sort();
    let mut ids: Vec<&String> = annotated.entries.iter().map(|e| &e.id).collect();
    ids.sort();
    assert_eq!(union, ids);
    assert!(split.train_ids.is_disjoint(&split.val_ids));

    let path = dir.path().join("split.csv");
    split.save_csv(&path).unwrap();
    let back = fundus_core::SplitAssignment::load_csv(&path).unwrap();
    assert_eq!(back.train_ids, split.train_ids);
    assert_eq!(back.val_ids, split.val_ids);
}
