//! Library results against brute-force references.

mod support;

use pathoscope_core::detector::{non_max_suppression, score_image, window_origins, detect, DetectorConfig};
use pathoscope_core::eval::{pr_curve, roc_curve, ScoredSet};
use pathoscope_core::model::build_network;
use pathoscope_core::patchset::{generate_patches, AnnotatedImage, Label, PatchSpec, Raster};
use pathoscope_core::synth::{generate, SynthConfig};
use support::*;

#[test]
fn nms_equals_quadratic_rescan() {
    let mut r = rng(1);
    for case in 0..300 {
        let n = 1 + case % 200;
        let cands = random_candidates(&mut r, n, 160);
        let threshold = [0.0, 0.1, 0.3, 0.5, 0.9][case % 5];
        assert_eq!(non_max_suppression(&cands, threshold), reference_nms(&cands, threshold), "case {case}");
    }
}

#[test]
fn auc_equals_mann_whitney_and_ap_equals_stepwise() {
    let mut r = rng(2);
    for case in 0..120 {
        let n = 2 + case * 4;
        let (scores, labels) = random_scored_set(&mut r, n);
        let set = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
        let auc = roc_curve(&set).unwrap().auc;
        let ap = pr_curve(&set).unwrap().ap;
        assert!((auc - mann_whitney(&scores, &labels)).abs() <= 1e-9, "case {case}");
        assert!((ap - stepwise_ap(&scores, &labels)).abs() <= 1e-12, "case {case}");
    }
}

fn oracle_corpus(seed: u64) -> Vec<AnnotatedImage> {
    let cfg = SynthConfig {
        n_images: 50,
        objects_per_image: [0, 6],
        object_axes: [3.0, 12.0],
        edge_margin: 0.0,
        seed,
        ..SynthConfig::default()
    };
    generate(&cfg).unwrap().annotated()
}

#[test]
fn sampled_negatives_never_touch_an_annotation() {
    let mut images = oracle_corpus(3);
    add_foreign_boxes(&mut images, &mut rng(3));
    let refs: Vec<&AnnotatedImage> = images.iter().collect();
    for spec in [
        PatchSpec::default(),
        PatchSpec { downsample_factor: 3, patch_size: 16, stride: 5, ..PatchSpec::default() },
        PatchSpec { downsample_factor: 1, patch_size: 24, stride: 7, negatives_per_image: Some(300), ..PatchSpec::default() },
    ] {
        let (patches, stats) = generate_patches(&refs, &spec, 11, "balance/all").unwrap();
        let negatives: Vec<_> = patches.into_iter().filter(|p| p.label == Label::Negative).collect();
        assert_eq!(negatives.len(), stats.negatives_kept);
        assert!(!negatives.is_empty());
        assert_eq!(negative_overlap(&images, &negatives, &spec), None, "{spec:?}");
    }
}

#[test]
fn synthetic_ellipses_lie_inside_their_boxes() {
    let corpus = generate(&SynthConfig { n_images: 40, ..SynthConfig::default() }).unwrap();
    for s in &corpus.images {
        assert_eq!(s.ellipses.len(), s.image.boxes.len());
        for (e, b) in s.ellipses.iter().zip(&s.image.boxes) {
            let (mut inside, mut touches) = (0, [false; 4]);
            for y in 0..s.image.height() {
                for x in 0..s.image.width() {
                    // Pixel center inside the rotated ellipse, from the definition.
                    let (dx, dy) = (x as f64 + 0.5 - e.center.0, y as f64 + 0.5 - e.center.1);
                    let (sin, cos) = e.angle.sin_cos();
                    let u = (dx * cos + dy * sin) / e.semi_axes.0;
                    let v = (dy * cos - dx * sin) / e.semi_axes.1;
                    if u * u + v * v > 1.0 {
                        continue;
                    }
                    inside += 1;
                    let (x, y) = (x as u32, y as u32);
                    assert!(b.x_min <= x && x < b.x_max && b.y_min <= y && y < b.y_max, "{} pixel ({x},{y}) outside {b:?}", s.image.id);
                    touches[0] |= x == b.x_min;
                    touches[1] |= x + 1 == b.x_max;
                    touches[2] |= y == b.y_min;
                    touches[3] |= y + 1 == b.y_max;
                }
            }
            assert!(inside > 0);
            assert_eq!(touches, [true; 4], "box {b:?} is not tight");
        }
    }
}

#[test]
fn score_image_window_counts() {
    let model = build_network(32, 0).unwrap();
    let spec = PatchSpec::default();
    let everything = DetectorConfig { stride: 8, probability_threshold: 0.0, overlap_threshold: 0.3 };
    let raster = Raster::filled(64, 64, [200.0, 190.0, 210.0]);
    assert_eq!(score_image(&model, &raster, &spec, &everything).unwrap().len(), 25);
    let exact = Raster::filled(32, 32, [200.0; 3]);
    assert_eq!(score_image(&model, &exact, &spec, &everything).unwrap().len(), 1);
    let none = DetectorConfig { probability_threshold: 1.0, ..everything.clone() };
    assert!(score_image(&model, &raster, &spec, &none).unwrap().is_empty());
    assert!(score_image(&model, &Raster::filled(31, 64, [0.0; 3]), &spec, &everything).is_err());
    assert_eq!(window_origins(64, 64, 32, 8).len(), 25);
}

#[test]
fn detections_are_reported_in_original_coordinates() {
    let model = build_network(16, 4).unwrap();
    let cfg = DetectorConfig { stride: 4, probability_threshold: 0.0, overlap_threshold: 0.3 };
    let raster = generate(&SynthConfig { n_images: 1, image_size: 96, object_axes: [3.0, 6.0], edge_margin: 0.0, ..Default::default() })
        .unwrap()
        .images[0]
        .image
        .raster
        .clone();
    for factor in [1u32, 2, 3] {
        let spec = PatchSpec { downsample_factor: factor, patch_size: 16, ..PatchSpec::default() };
        let dets = detect(&model, &raster, &spec, &cfg).unwrap();
        assert!(!dets.is_empty());
        for d in dets {
            let b = &d.bbox;
            assert_eq!(b.x_max - b.x_min, 16 * factor, "factor {factor}");
            assert_eq!(b.x_min % (4 * factor), 0);
            assert!(b.x_max as usize <= raster.width() && b.y_max as usize <= raster.height());
        }
    }
}
