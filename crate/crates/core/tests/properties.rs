//! Property tests over the public API.

use proptest::prelude::*;
use wsphen_core::analysis::{adjusted_rand_index, auc, kmeans, ppv_at_sensitivity, KMeansConfig};
use wsphen_core::datamodel::{split_cohort, SplitFractions};
use wsphen_core::embeddings::{cosine_similarity, select_features, AggregatedConcepts};
use wsphen_core::numerics::{layer_norm, softmax_rows};
use wsphen_core::{Cohort, ConceptId, EmbeddingTable, Label, PatientRecord, Tensor, TimeWindow};

fn cid(s: &str) -> ConceptId {
    ConceptId::new(s).unwrap()
}

fn finite() -> impl Strategy<Value = f64> {
    -50.0..50.0f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        rows in prop::collection::vec(prop::collection::vec(finite(), 5), 1..6),
        shift in -100.0..100.0f64,
    ) {
        let x = Tensor::from_rows(&rows).unwrap();
        let s = softmax_rows(&x);
        for i in 0..s.rows() {
            prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let shifted = Tensor::from_rows(&rows.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect::<Vec<_>>()).unwrap();
        let t = softmax_rows(&shifted);
        for (a, b) in s.data().iter().zip(t.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_ignores_positive_affine_maps(
        x in prop::collection::vec(finite(), 2..10),
        a in 0.5..20.0f64,
        b in -10.0..10.0f64,
    ) {
        let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-2);
        let n = x.len();
        let (g, z) = (vec![1.0; n], vec![0.0; n]);
        let base = layer_norm(&x, &g, &z, 1e-12).unwrap();
        let mapped: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let other = layer_norm(&mapped, &g, &z, 1e-12).unwrap();
        for (p, q) in base.iter().zip(&other) {
            prop_assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn cosine_is_symmetric_and_scale_invariant(
        a in prop::collection::vec(finite(), 4),
        b in prop::collection::vec(finite(), 4),
        lambda in 0.01..100.0f64,
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let s = cosine_similarity(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - cosine_similarity(&b, &a).unwrap()).abs() < 1e-12);
        let scaled: Vec<f64> = a.iter().map(|v| v * lambda).collect();
        prop_assert!((s - cosine_similarity(&scaled, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn selection_is_a_deterministic_subset_keeping_the_anchor(
        vectors in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 2..20),
        present in prop::collection::vec(any::<bool>(), 20),
        counts in prop::collection::vec(1u64..50, 20),
        k_star in 1usize..10,
    ) {
        let rows: Vec<(ConceptId, Vec<f64>)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (cid(&format!("C:{i:02}")), v.iter().map(|x| x + 1.5).collect()))
            .collect();
        let table = EmbeddingTable::from_rows(3, rows.clone()).unwrap();
        let anchor = rows[0].0.clone();
        let pairs: Vec<(ConceptId, u64)> = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| present[*i])
            .map(|(i, (c, _))| (c.clone(), counts[i]))
            .collect();
        let agg = AggregatedConcepts { pairs: pairs.clone() };
        let out = select_features(&agg, &table, &anchor, k_star).unwrap();
        prop_assert!(out.len() <= k_star);
        prop_assert_eq!(out.len(), pairs.len().min(k_star));
        for p in &out.pairs {
            prop_assert!(pairs.contains(p));
        }
        if agg.contains(&anchor) {
            prop_assert!(out.contains(&anchor));
        }
        prop_assert_eq!(out, select_features(&agg, &table, &anchor, k_star).unwrap());
    }

    #[test]
    fn auc_ignores_increasing_transforms(
        scores in prop::collection::vec(-5.0..5.0f64, 4..40),
        labels in prop::collection::vec(any::<bool>(), 40),
    ) {
        let labels = &labels[..scores.len()];
        prop_assume!(labels.contains(&true) && labels.contains(&false));
        let mapped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
        prop_assert!((auc(&scores, labels).unwrap() - auc(&mapped, labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ppv_threshold_is_the_highest_reaching_target(
        scores in prop::collection::vec(0u8..20, 4..40),
        labels in prop::collection::vec(any::<bool>(), 40),
    ) {
        let scores: Vec<f64> = scores.iter().map(|&s| f64::from(s)).collect();
        let labels = &labels[..scores.len()];
        prop_assume!(labels.contains(&true));
        let op = ppv_at_sensitivity(&scores, labels, 0.85).unwrap();
        let n_pos = labels.iter().filter(|&&y| y).count() as f64;
        let sens = |t: f64| scores.iter().zip(labels).filter(|(s, y)| **s >= t && **y).count() as f64 / n_pos;
        prop_assert!(sens(op.threshold) >= 0.85 - 1e-12);
        for &t in scores.iter().filter(|&&t| t > op.threshold) {
            prop_assert!(sens(t) < 0.85 - 1e-12);
        }
    }

    #[test]
    fn ari_is_symmetric_and_label_free(
        a in prop::collection::vec(0usize..4, 3..40),
        b in prop::collection::vec(0usize..4, 40),
    ) {
        let b = &b[..a.len()];
        let ab = adjusted_rand_index(&a, b).unwrap();
        prop_assert!((ab - adjusted_rand_index(b, &a).unwrap()).abs() < 1e-12);
        let relabeled: Vec<usize> = a.iter().map(|&x| 3 - x).collect();
        prop_assert!((ab - adjusted_rand_index(&relabeled, b).unwrap()).abs() < 1e-12);
        prop_assert!((adjusted_rand_index(&a, &a).unwrap() - 1.0).abs() < 1e-12 || a.iter().all(|&x| x == a[0]));
    }

    #[test]
    fn kmeans_trail_nonincreasing_and_clusters_nonempty(
        data in prop::collection::vec(-10.0..10.0f64, 20..80),
        k in 1usize..5,
        seed in 0u64..1000,
    ) {
        let n = data.len() / 2;
        let x = Tensor::matrix(n, 2, data[..2 * n].to_vec()).unwrap();
        let m = kmeans(&x, &KMeansConfig { k, seed, n_init: 2, ..KMeansConfig::default() }).unwrap();
        prop_assert!(m.objective_trail.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0)));
        prop_assert!(m.sizes().iter().all(|&s| s > 0));
        prop_assert_eq!(m.assignments.len(), n);
    }

    #[test]
    fn split_is_an_exact_partition(
        n_pos in 10usize..60,
        n_neg in 10usize..60,
        n_silver in 0usize..30,
        seed in any::<u64>(),
    ) {
        let mut patients = Vec::new();
        for i in 0..n_pos + n_neg + n_silver {
            let label = if i < n_pos {
                Label::gold(true)
            } else if i < n_pos + n_neg {
                Label::gold(false)
            } else {
                Label::silver(0.5).unwrap()
            };
            patients.push(PatientRecord {
                patient_id: format!("P{i}"),
                windows: vec![TimeWindow { t: 0, events: vec![(cid("A:1"), 1)] }],
                label,
                survival: None,
            });
        }
        let cohort = Cohort::new(patients, cid("A:1")).unwrap();
        let split = split_cohort(&cohort, SplitFractions::default(), seed).unwrap();
        let mut gold: Vec<usize> = split.gold_train.iter().chain(&split.folds[0]).chain(&split.folds[1]).copied().collect();
        gold.sort_unstable();
        prop_assert_eq!(gold, cohort.gold_indices());
        prop_assert_eq!(&split.silver, &cohort.silver_indices());
    }
}
