use ndarray::{Array1, Array2, Array3};

use super::*;

fn smooth_map(h: usize, w: usize) -> Array2<f32> {
    Array2::from_shape_fn((h, w), |(y, x)| {
        let fy = y as f32 / h as f32;
        let fx = x as f32 / w as f32;
        0.5 + 0.4 * (3.0 * fy).sin() * (2.0 * fx).cos()
    })
}

fn test_image(h: usize, w: usize) -> Array3<f32> {
    Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        ((c * 83 + y * 7 + x * 3) % 256) as f32
    })
}

#[test]
fn zero_probability_yields_identity() {
    let mut spec = TransformSpec::classifier();
    spec.apply_probability = 0.0;
    for seed in 0..20 {
        let t = sample_transform(&spec, seed);
        assert!(t.is_identity(), "seed {seed} gave {t:?}");
    }
}

#[test]
fn probability_one_samples_rotation_in_range() {
    let mut spec = TransformSpec::localizer();
    spec.apply_probability = 1.0;
    let mut saw_nonzero = false;
    for seed in 0..50 {
        let t = sample_transform(&spec, seed);
        assert!(t.angle_deg >= -20.0 && t.angle_deg <= 20.0);
        saw_nonzero |= t.angle_deg != 0.0;
    }
    assert!(saw_nonzero);
}

#[test]
fn same_seed_same_transform() {
    let spec = TransformSpec::classifier();
    assert_eq!(sample_transform(&spec, 99), sample_transform(&spec, 99));
    assert_ne!(sample_transform(&spec, 99), sample_transform(&spec, 100));
}

#[test]
fn identity_apply_returns_inputs_unchanged() {
    let t = ConcreteTransform::identity(0);
    let img = test_image(32, 32);
    let targets = vec![
        SpatialTarget::Map(smooth_map(32, 32)),
        SpatialTarget::Mask(Array2::from_elem((32, 32), 2u8)),
        SpatialTarget::Point((3.5, 30.0)),
    ];
    let (out_img, out_targets) = apply(&t, &img, &targets).unwrap();
    assert_eq!(out_img, img);
    assert_eq!(out_targets, targets);
}

#[test]
fn horizontal_flip_maps_point_to_mirror() {
    let t = ConcreteTransform {
        hflip: true,
        ..ConcreteTransform::identity(0)
    };
    let img = test_image(16, 24); // W = 24
    let (_, targets) = apply(&t, &img, &[SpatialTarget::Point((5.0, 7.0))]).unwrap();
    match targets[0] {
        SpatialTarget::Point((x, y)) => {
            assert_eq!((x, y), (23.0 - 5.0, 7.0));
        }
        _ => unreachable!(),
    }
}

#[test]
fn flips_move_pixels_exactly() {
    // brute-force pixel-grid check of the flip algebra
    let t = ConcreteTransform {
        hflip: true,
        vflip: true,
        ..ConcreteTransform::identity(0)
    };
    let img = test_image(8, 8);
    let (out, _) = apply(&t, &img, &[]).unwrap();
    for c in 0..3 {
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(out[(c, y, x)], img[(c, 7 - y, 7 - x)]);
            }
        }
    }
}

#[test]
fn mask_labels_survive_any_geometry() {
    let mut spec = TransformSpec::segmenter();
    spec.apply_probability = 1.0;
    let labels = Array2::from_shape_fn((48, 48), |(y, x)| {
        if (y as i32 - 24).pow(2) + (x as i32 - 24).pow(2) < 100 {
            2u8
        } else if y > 24 {
            1
        } else {
            0
        }
    });
    let alphabet: std::collections::BTreeSet<u8> = labels.iter().copied().collect();
    let img = test_image(48, 48);
    for seed in 0..10 {
        let t = sample_transform(&spec, seed);
        let (_, targets) = apply(&t, &img, &[SpatialTarget::Mask(labels.clone())]).unwrap();
        match &targets[0] {
            SpatialTarget::Mask(out) => {
                let out_alpha: std::collections::BTreeSet<u8> = out.iter().copied().collect();
                assert!(out_alpha.is_subset(&alphabet), "nearest warp invented labels");
            }
            _ => unreachable!(),
        }
    }
}

#[test]
fn frame_mismatch_is_rejected() {
    let t = ConcreteTransform::identity(0);
    let img = test_image(16, 16);
    let err = apply(&t, &img, &[SpatialTarget::Map(smooth_map(8, 8))]);
    assert!(matches!(err, Err(AugmentError::FrameMismatch { .. })));
}

#[test]
fn invert_identity_is_exact() {
    let t = ConcreteTransform::identity(0);
    let maps = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| (c + y + x) as f32);
    let out = invert_geometric(&t, &maps).unwrap();
    assert_eq!(out, maps);
}

#[test]
fn double_flip_inversion_restores_original() {
    let t = ConcreteTransform {
        hflip: true,
        vflip: true,
        ..ConcreteTransform::identity(0)
    };
    let maps = Array3::from_shape_fn((2, 12, 12), |(c, y, x)| (c * 100 + y * 12 + x) as f32);
    let img = test_image(12, 12);
    let (_, warped) = apply(
        &t,
        &img,
        &[
            SpatialTarget::Map(maps.index_axis(ndarray::Axis(0), 0).to_owned()),
            SpatialTarget::Map(maps.index_axis(ndarray::Axis(0), 1).to_owned()),
        ],
    )
    .unwrap();
    let mut stacked = Array3::<f32>::zeros((2, 12, 12));
    for (i, target) in warped.iter().enumerate() {
        if let SpatialTarget::Map(m) = target {
            stacked.index_axis_mut(ndarray::Axis(0), i).assign(m);
        }
    }
    let restored = invert_geometric(&t, &stacked).unwrap();
    assert_eq!(restored, maps);
}

#[test]
fn apply_invert_roundtrip_small_interior_error() {
    // smooth maps, transforms from the segmentation recipe (invertible only)
    let spec = TransformSpec::segmenter().invertible_only();
    let img = test_image(64, 64);
    for seed in 0..8 {
        let mut t = sample_transform(&spec, seed);
        // keep translation within the recipe but bounded for a 64px frame
        t.translate = (t.translate.0.clamp(-12.0, 12.0), t.translate.1.clamp(-12.0, 12.0));
        let map = smooth_map(64, 64);
        let (_, warped) = apply(&t, &img, &[SpatialTarget::Map(map.clone())]).unwrap();
        let warped_map = match &warped[0] {
            SpatialTarget::Map(m) => m.clone(),
            _ => unreachable!(),
        };
        let mut stack = Array3::<f32>::zeros((1, 64, 64));
        stack.index_axis_mut(ndarray::Axis(0), 0).assign(&warped_map);
        let restored = invert_geometric(&t, &stack).unwrap();
        let mut err_sum = 0f64;
        let mut count = 0usize;
        for y in 16..48 {
            for x in 16..48 {
                err_sum += (restored[(0, y, x)] - map[(y, x)]).abs() as f64;
                count += 1;
            }
        }
        let mae = err_sum / count as f64;
        assert!(mae <= 0.02, "seed {seed}: interior MAE {mae}");
    }
}

#[test]
fn perspective_rejected_by_score_map_inversion() {
    let t = ConcreteTransform {
        perspective_shift: Some([(0.05, 0.0); 4]),
        ..ConcreteTransform::identity(0)
    };
    let maps = Array3::<f32>::zeros((1, 8, 8));
    assert!(matches!(
        invert_geometric(&t, &maps),
        Err(AugmentError::NotInvertible(_))
    ));
}

struct ConstModel {
    class: Option<Array1<f32>>,
    map: Option<Array3<f32>>,
}

impl ScoreModel for ConstModel {
    fn forward_scores(&self, _image: &Array3<f32>) -> Result<ScoreTensor, String> {
        if let Some(c) = &self.class {
            Ok(ScoreTensor::Class(c.clone()))
        } else {
            Ok(ScoreTensor::Map(self.map.clone().unwrap()))
        }
    }
}

#[test]
fn constant_model_ensemble_equals_single_forward() {
    let logits = Array1::from_vec(vec![0.7f32, -0.4]);
    let model = ConstModel {
        class: Some(logits.clone()),
        map: None,
    };
    let config = TtaConfig {
        n_transforms: 10,
        seed: 5,
        spec: TransformSpec::classifier(),
    };
    let domains = [Rendering::Identity, Rendering::Identity, Rendering::Identity];
    let out = tta_predict(&model, &test_image(32, 32), &domains, &config, TtaMode::Classification).unwrap();
    assert_eq!(out.members, 30);
    assert_eq!(out.forward_count(), 30);
    assert!(out.softmax_applied_once_last());
    let single = fundus_nn::loss::softmax_vec(logits.as_slice().unwrap());
    match out.probs {
        ScoreTensor::Class(p) => {
            for (a, b) in p.iter().zip(single.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
            assert!((p.sum() - 1.0).abs() < 1e-6);
        }
        _ => unreachable!(),
    }
}

#[test]
fn collapse_case_identity_single_member() {
    struct CountingModel(std::cell::Cell<usize>);
    impl ScoreModel for CountingModel {
        fn forward_scores(&self, image: &Array3<f32>) -> Result<ScoreTensor, String> {
            self.0.set(self.0.get() + 1);
            // scores depend on the image so transform effects would show
            let s0 = image.index_axis(ndarray::Axis(0), 0).sum() / 1e4;
            let s1 = image.index_axis(ndarray::Axis(0), 1).sum() / 1e4;
            Ok(ScoreTensor::Class(Array1::from_vec(vec![s0, s1])))
        }
    }
    let model = CountingModel(std::cell::Cell::new(0));
    let mut spec = TransformSpec::classifier();
    spec.apply_probability = 0.0; // identity transforms
    let config = TtaConfig {
        n_transforms: 1,
        seed: 1,
        spec,
    };
    let img = test_image(24, 24);
    let out = tta_predict(&model, &img, &[Rendering::Identity], &config, TtaMode::Classification).unwrap();
    assert_eq!(out.members, 1);
    assert_eq!(model.0.get(), 1);
    let direct = model.forward_scores(&img).unwrap();
    let direct_probs = match direct {
        ScoreTensor::Class(v) => fundus_nn::loss::softmax_vec(v.as_slice().unwrap()),
        _ => unreachable!(),
    };
    match out.probs {
        ScoreTensor::Class(p) => {
            for (a, b) in p.iter().zip(direct_probs.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        _ => unreachable!(),
    }
}

#[test]
fn segmentation_probabilities_sum_to_one_per_pixel() {
    let map = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| {
        (c as f32 * 0.5) - (y as f32 * 0.01) + (x as f32 * 0.02)
    });
    let model = ConstModel {
        class: None,
        map: Some(map),
    };
    let config = TtaConfig {
        n_transforms: 10,
        seed: 2,
        spec: TransformSpec::segmenter(),
    };
    let domains = [Rendering::Identity, Rendering::Identity, Rendering::Identity];
    let out = tta_predict(&model, &test_image(16, 16), &domains, &config, TtaMode::Segmentation).unwrap();
    assert_eq!(out.members, 30);
    assert!(out.softmax_applied_once_last());
    match out.probs {
        ScoreTensor::Map(p) => {
            for y in 0..16 {
                for x in 0..16 {
                    let s: f32 = (0..3).map(|c| p[(c, y, x)]).sum();
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
        _ => unreachable!(),
    }
}

#[test]
fn forward_failure_aborts_ensemble() {
    struct FailingModel;
    impl ScoreModel for FailingModel {
        fn forward_scores(&self, _: &Array3<f32>) -> Result<ScoreTensor, String> {
            Err("boom".into())
        }
    }
    let config = TtaConfig::default();
    let err = tta_predict(
        &FailingModel,
        &test_image(8, 8),
        &[Rendering::Identity],
        &config,
        TtaMode::Classification,
    );
    assert!(matches!(err, Err(tta::TtaError::Forward(_))));
}

#[test]
fn fixed_seed_fixed_ensemble() {
    struct SumModel;
    impl ScoreModel for SumModel {
        fn forward_scores(&self, image: &Array3<f32>) -> Result<ScoreTensor, String> {
            let s0 = image.index_axis(ndarray::Axis(0), 0).sum() / 1e5;
            let s1 = image.index_axis(ndarray::Axis(0), 2).sum() / 1e5;
            Ok(ScoreTensor::Class(Array1::from_vec(vec![s0, s1])))
        }
    }
    let config = TtaConfig {
        n_transforms: 5,
        seed: 77,
        spec: TransformSpec::classifier(),
    };
    let img = test_image(40, 40);
    let domains = [Rendering::Identity, Rendering::Identity];
    let a = tta_predict(&SumModel, &img, &domains, &config, TtaMode::Classification).unwrap();
    let b = tta_predict(&SumModel, &img, &domains, &config, TtaMode::Classification).unwrap();
    match (a.probs, b.probs) {
        (ScoreTensor::Class(pa), ScoreTensor::Class(pb)) => assert_eq!(pa, pb),
        _ => unreachable!(),
    }
}
