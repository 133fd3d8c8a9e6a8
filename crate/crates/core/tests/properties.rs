//! Property tests for the invariants the pipeline promises.

mod support;

use pathoscope_core::detector::{non_max_suppression, window_origins, Candidate};
use pathoscope_core::eval::{evaluate, ExtraTreesConfig, Forest, ScoredSet};
use pathoscope_core::model::{build_network, standard_flatten_size, standard_parameter_count};
use pathoscope_core::neural::Tensor;
use pathoscope_core::patchset::{
    augment, balance, split_dataset, BoundingBox, Label, Patch, PatchProvenance, PatchSpec, SplitMode,
};
use pathoscope_core::synth::{generate, SynthConfig};
use proptest::prelude::*;
use support::iou_by_definition;

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0u32..200, 0u32..200, 1u32..80, 1u32..80).prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h, "t"))
}

fn arb_candidates(max: usize) -> impl Strategy<Value = Vec<Candidate>> {
    prop::collection::vec((arb_box(), 0u8..20), 0..max).prop_map(|v| {
        v.into_iter().map(|(bbox, q)| Candidate { bbox, probability: f64::from(q) / 19.0 }).collect()
    })
}

fn arb_patch() -> impl Strategy<Value = Patch> {
    (2usize..10).prop_flat_map(|n| {
        prop::collection::vec(0.0f32..1.0, 3 * n * n).prop_map(move |data| Patch {
            pixels: Tensor::new(vec![3, n, n], data).unwrap(),
            label: Label::Positive,
            source_image_id: "p".into(),
            origin: (0, 0),
            provenance: PatchProvenance::Original,
        })
    })
}

fn sorted_bits(v: &[f32]) -> Vec<u32> {
    let mut b: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
    b.sort_unstable();
    b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn balance_never_exceeds_the_cap(pos in 1usize..50, neg in 0usize..6000, ratio in 1usize..150, seed: u64) {
        let positives = vec![(); pos];
        let negatives: Vec<usize> = (0..neg).collect();
        let kept = balance(&positives, negatives, ratio, seed).unwrap();
        prop_assert!(kept.len() <= ratio * pos);
        prop_assert_eq!(kept.len(), neg.min(ratio * pos));
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn augment_gives_eight_permutations_with_identity_first(patch in arb_patch()) {
        let out = augment(&patch).unwrap();
        prop_assert_eq!(out.len(), 8);
        prop_assert_eq!(&out[0].pixels, &patch.pixels);
        let want = sorted_bits(patch.pixels.data());
        for (t, p) in out.iter().enumerate() {
            prop_assert_eq!(p.provenance, PatchProvenance::Augmented(t as u8));
            prop_assert_eq!(p.pixels.shape(), patch.pixels.shape());
            prop_assert_eq!(sorted_bits(p.pixels.data()), want.clone());
        }
    }

    #[test]
    fn window_count_has_closed_form(w in 1usize..300, h in 1usize..300, p in 2usize..64, stride in 1usize..40) {
        let spec = PatchSpec { patch_size: p, stride, ..PatchSpec::default() };
        let origins = window_origins(w, h, p, stride);
        prop_assert_eq!(origins.len(), spec.grid_window_count(w, h));
        let expect = if w < p || h < p { 0 } else { ((w - p) / stride + 1) * ((h - p) / stride + 1) };
        prop_assert_eq!(origins.len(), expect);
        for (x, y) in origins {
            prop_assert!(x as usize + p <= w && y as usize + p <= h);
        }
    }

    #[test]
    fn nms_output_is_a_suppressing_subset(cands in arb_candidates(60), thr in 0.0f64..1.0) {
        let kept = non_max_suppression(&cands, thr);
        for d in &kept {
            prop_assert!(cands.iter().any(|c| c.bbox == d.bbox && c.probability == d.probability));
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(iou_by_definition(&a.bbox, &b.bbox) <= thr);
            }
        }
        // Everything dropped overlaps a kept box at least as confident.
        for c in &cands {
            let survived = kept.iter().any(|d| d.bbox == c.bbox && d.probability == c.probability);
            if !survived {
                prop_assert!(kept.iter().any(|d| d.probability >= c.probability && iou_by_definition(&d.bbox, &c.bbox) > thr));
            }
        }
        let again: Vec<Candidate> = kept.iter().map(|d| Candidate { bbox: d.bbox.clone(), probability: d.probability }).collect();
        prop_assert_eq!(non_max_suppression(&again, thr), kept);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let ab = a.iou(&b);
        prop_assert_eq!(ab, b.iou(&a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - iou_by_definition(&a, &b)).abs() < 1e-12);
        prop_assert_eq!(a.iou(&a), 1.0);
    }

    #[test]
    fn auc_ignores_monotone_rescaling_and_order(
        data in prop::collection::vec((0u16..400, any::<bool>()), 2..300),
        shift in -5.0f64..5.0,
        rotate in 0usize..300,
    ) {
        let (scores, labels): (Vec<f64>, Vec<bool>) = data.iter().map(|&(s, l)| (f64::from(s) / 400.0, l)).unzip();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let base = evaluate(&ScoredSet::new(scores.clone(), labels.clone()).unwrap()).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s + shift).exp()).collect();
        let mono = evaluate(&ScoredSet::new(mapped, labels.clone()).unwrap()).unwrap();
        prop_assert!((base.auc() - mono.auc()).abs() < 1e-12);
        prop_assert!((base.ap() - mono.ap()).abs() < 1e-12);
        let k = rotate % scores.len();
        let (mut s2, mut l2) = (scores.clone(), labels.clone());
        s2.rotate_left(k);
        l2.rotate_left(k);
        let rotated = evaluate(&ScoredSet::new(s2, l2).unwrap()).unwrap();
        prop_assert!((base.auc() - rotated.auc()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base.auc()) && (0.0..=1.0).contains(&base.ap()));
    }

    #[test]
    fn ap_is_permutation_invariant_without_ties(
        labels in prop::collection::vec(any::<bool>(), 2..200),
        seed: u64,
        rotate in 0usize..200,
    ) {
        prop_assume!(labels.iter().any(|&l| l));
        let mut r = support::rng(seed);
        let mut scores: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
        use rand::seq::SliceRandom;
        scores.shuffle(&mut r);
        let set = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
        let ap = pathoscope_core::eval::pr_curve(&set).unwrap().ap;
        let k = rotate % labels.len();
        let (mut s2, mut l2) = (scores, labels);
        s2.rotate_left(k);
        l2.rotate_left(k);
        let ap2 = pathoscope_core::eval::pr_curve(&ScoredSet::new(s2, l2).unwrap()).unwrap().ap;
        prop_assert!((ap - ap2).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forest_scores_are_probabilities(
        rows in prop::collection::vec((prop::collection::vec(-10.0f64..10.0, 3), any::<bool>()), 4..80),
        probes in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 3), 1..20),
        seed: u64,
    ) {
        let (x, y): (Vec<Vec<f64>>, Vec<bool>) = rows.into_iter().unzip();
        prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
        let cfg = ExtraTreesConfig { n_trees: 10, ..ExtraTreesConfig::for_features(3, seed) };
        let forest = Forest::train(&x, &y, &cfg).unwrap();
        for p in forest.predict_many(&probes) {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn synthetic_boxes_are_valid(seed: u64, size in 96usize..192, lo in 0usize..3, extra in 0usize..4) {
        let cfg = SynthConfig {
            n_images: 3,
            image_size: size,
            objects_per_image: [lo, lo + extra],
            object_axes: [3.0, 8.0],
            edge_margin: 10.0,
            seed,
            ..SynthConfig::default()
        };
        prop_assume!(cfg.validate().is_ok());
        for s in generate(&cfg).unwrap().images {
            prop_assert!(s.image.validate().is_ok());
            prop_assert!((lo..=lo + extra).contains(&s.image.boxes.len()));
            for (i, a) in s.image.boxes.iter().enumerate() {
                prop_assert!(a.x_min < a.x_max && a.y_min < a.y_max);
                prop_assert!(a.x_max as usize <= size && a.y_max as usize <= size);
                for b in &s.image.boxes[i + 1..] {
                    prop_assert!(!a.intersects(b));
                }
            }
        }
    }

    #[test]
    fn shape_law_holds_for_any_patch_size(p in 8usize..64) {
        let model = build_network(p, 0).unwrap();
        let s = (p - 2) / 2 - 1;
        prop_assert_eq!(standard_flatten_size(p), 12 * s * s);
        let closed = 196 + (12 * 7 * 4 + 12) + (12 * s * s * 500 + 500) + (500 * 2 + 2);
        prop_assert_eq!(standard_parameter_count(p), closed);
        prop_assert_eq!(model.network.layers().iter().flatten().map(|l| l.len()).sum::<usize>(), closed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn patch_split_keeps_the_augmentation_floor(seed in 0u64..1000, per_image in 120usize..200) {
        let corpus = generate(&SynthConfig {
            n_images: 12,
            image_size: 128,
            objects_per_image: [1, 2],
            object_axes: [4.0, 8.0],
            edge_margin: 24.0,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
        .annotated();
        let spec = PatchSpec { negatives_per_image: Some(per_image), stride: 2, ..PatchSpec::default() };
        let split = split_dataset(&corpus, &spec, seed, SplitMode::Patch).unwrap();
        let pos = split.test.iter().filter(|p| p.label.is_positive()).count();
        prop_assert!(split.stats.negatives_kept <= 100 * split.stats.original_positives);
        prop_assert!(pos * 108 >= 8 * split.test.len(), "{} of {}", pos, split.test.len());
    }
}
