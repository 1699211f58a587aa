use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::tensor::Tensor;
use crate::vit::EmbeddingSet;

fn emb(rows: &[Vec<f64>], labels: &[u32]) -> EmbeddingSet {
    EmbeddingSet::new(Tensor::from_rows(rows).unwrap(), labels.to_vec(), "test").unwrap()
}

fn exact(metric: Metric) -> FitOptions {
    FitOptions {
        metric,
        relative_jitter: 0.0,
        ..Default::default()
    }
}

#[test]
fn fit_two_points() {
    let s = fit_stats(&emb(&[vec![0.0, 0.0], vec![2.0, 0.0]], &[0, 0]), &FitOptions::default()).unwrap();
    assert_eq!(s.means[0], vec![1.0, 0.0]);
    assert_eq!(s.covariances[0].data(), &[2.0, 0.0, 0.0, 0.0]);
    assert_eq!(s.counts, vec![2]);
    assert!(s.inverses[0].all_finite());
}

#[test]
fn identical_embeddings_give_jitter_inverse() {
    let s = fit_stats(&emb(&vec![vec![3.0, 1.0]; 4], &[0; 4]), &FitOptions::default()).unwrap();
    assert!(s.covariances[0].data().iter().all(|&v| v == 0.0));
    let j = s.jitters[0];
    assert!(j > 0.0);
    let inv = s.inverses[0].data();
    assert!((inv[0] - 1.0 / j).abs() / (1.0 / j) < 1e-12 && inv[1] == 0.0);
}

#[test]
fn small_class_needs_fallback() {
    let e = emb(&[vec![0.0], vec![1.0], vec![5.0]], &[0, 0, 1]);
    let err = fit_stats(&e, &FitOptions::default()).unwrap_err();
    assert!(matches!(err, Error::InsufficientSamples { got: 1, .. }));
    assert!(err.to_string().contains("shared covariance"), "{err}");
    assert!(fit_stats(&e, &FitOptions::metric(Metric::Euclidean)).is_ok());
    let shared = FitOptions {
        shared_covariance: true,
        ..Default::default()
    };
    let s = fit_stats(&e, &shared).unwrap();
    assert_eq!(s.inverses[0], s.inverses[1]);
}

#[test]
fn mahalanobis_examples() {
    let (a, b) = (3f64.sqrt(), 0.75f64.sqrt());
    let rows = [vec![a, 0.0], vec![-a, 0.0], vec![0.0, b], vec![0.0, -b]];
    let s = fit_stats(&emb(&rows, &[0; 4]), &exact(Metric::Mahalanobis)).unwrap();
    assert!((s.covariances[0].data()[0] - 2.0).abs() < 1e-14);
    assert!((s.covariances[0].data()[3] - 0.5).abs() < 1e-14);
    assert_eq!(mahalanobis(&[0.0, 0.0], &s, 0), 0.0);
    assert!((mahalanobis(&[1.0, 1.0], &s, 0) - 2.5).abs() < 1e-12);

    let c = 1.5f64.sqrt();
    let rows = [vec![c, 0.0], vec![-c, 0.0], vec![0.0, c], vec![0.0, -c]];
    let s = fit_stats(&emb(&rows, &[0; 4]), &exact(Metric::Mahalanobis)).unwrap();
    assert!((mahalanobis(&[1.0, 1.0], &s, 0) - 2.0).abs() < 1e-12);
}

#[test]
fn distance_examples() {
    let e = emb(&[vec![0.0, 0.0], vec![10.0, 0.0]], &[0, 1]);
    let s = fit_stats(&e, &FitOptions::metric(Metric::Euclidean)).unwrap();
    assert_eq!(distance_score(&[1.0, 0.0], &s, Metric::Euclidean).unwrap(), (1.0, 0));
    assert_eq!(distance_score(&[5.0, 3.0], &s, Metric::Euclidean).unwrap(), (34.0, 0));
    assert!(matches!(
        distance_score(&[0.0, 0.0], &s, Metric::Cosine),
        Err(Error::UndefinedAngle)
    ));
    let e = emb(&[vec![1.0, 0.0], vec![0.0, 2.0]], &[0, 1]);
    let s = fit_stats(&e, &FitOptions::metric(Metric::Cosine)).unwrap();
    assert_eq!(s.means[1], vec![0.0, 1.0]);
    let (d, c) = distance_score(&[3.0, 3.0], &s, Metric::Cosine).unwrap();
    assert!((d - (1.0 - 0.5f64.sqrt())).abs() < 1e-15);
    assert_eq!(c, 0);
}

#[test]
fn confidence_examples() {
    let (c, k) = confidence_score(&[0.7; 4]).unwrap();
    assert!((c - 0.25).abs() < 1e-15 && k == 0);
    let (c, k) = confidence_score(&[100.0, 0.0, 0.0]).unwrap();
    assert!(c > 1.0 - 1e-12 && k == 0);
    let (c, k) = confidence_score(&[1.0, 2.0, 3.0]).unwrap();
    let want = 3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp());
    assert!((c - want).abs() < 1e-15 && (c - 0.66524).abs() < 1e-5 && k == 2);
}

fn one_class() -> ClassStats {
    fit_stats(&emb(&[vec![0.0], vec![2.0]], &[0, 0]), &exact(Metric::Euclidean)).unwrap()
}

#[test]
fn boundary_values_are_inliers() {
    let s = one_class();
    // distance of 3 from mean 1 is 4; logits [ln 3, 0] give confidence 0.75
    let logits = [3f64.ln(), 0.0];
    let (conf, _) = confidence_score(&logits).unwrap();
    let t = Thresholds::new(4.0, conf).unwrap();
    let d = decide(&[3.0], &logits, &s, &t, Metric::Euclidean).unwrap();
    assert_eq!(d.distance, 4.0);
    assert!(!d.is_outlier);
    let above = Thresholds::new(4.0 - 1e-12, conf).unwrap();
    assert!(decide(&[3.0], &logits, &s, &above, Metric::Euclidean).unwrap().is_outlier);
    let conf_above = Thresholds::new(4.0, conf + 1e-12).unwrap();
    assert!(decide(&[3.0], &logits, &s, &conf_above, Metric::Euclidean).unwrap().is_outlier);
}

#[test]
fn either_branch_flags_an_outlier() {
    let s = one_class();
    let t = Thresholds::new(10.0, 0.9).unwrap();
    let far = decide(&[1e6], &[100.0, 0.0], &s, &t, Metric::Euclidean).unwrap();
    assert!(far.is_outlier && far.confidence == 1.0);
    let unsure = decide(&[1.0], &[0.0, 0.0], &s, &t, Metric::Euclidean).unwrap();
    assert!(unsure.is_outlier && unsure.distance == 0.0);
    let fine = decide(&[1.0], &[100.0, 0.0], &s, &t, Metric::Euclidean).unwrap();
    assert!(!fine.is_outlier);
}

#[test]
fn calibration_examples() {
    assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap(), 2.5);
    let t = calibrate_thresholds(&[3.0, 9.0, 1.0], &[0.5, 0.9, 0.7], 1.0).unwrap();
    assert_eq!(t.t_distance, 9.0);
    assert_eq!(t.t_conf, 0.5);
    assert!(calibrate_thresholds(&[], &[], 0.95).is_err());
    assert!(calibrate_thresholds(&[1.0], &[0.5], 0.0).is_err());
}

#[test]
fn one_class_matches_fit_stats() {
    let rows = [vec![1.0, 2.0], vec![2.0, 2.5], vec![0.5, 1.0]];
    let a = fit_one_class(&emb(&rows, &[4, 4, 4]), &FitOptions::default()).unwrap();
    let b = fit_stats(&emb(&rows, &[0, 0, 0]), &FitOptions::default()).unwrap();
    assert_eq!(a, b);
    assert!(fit_one_class(&emb(&rows, &[0, 1, 0]), &FitOptions::default()).is_err());
}

#[test]
fn stats_file_round_trip() {
    let rows = [vec![1.0, 2.0], vec![2.0, 2.5], vec![0.5, 1.0], vec![5.0, 1.0], vec![4.0, 0.0]];
    let s = fit_stats(&emb(&rows, &[0, 0, 0, 1, 1]), &FitOptions::default()).unwrap();
    let back = ClassStats::from_container(&s.to_container().unwrap()).unwrap();
    assert_eq!(back, s);
}

fn points(max_d: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max_d).prop_flat_map(|d| (Just(d), prop::collection::vec(-5.0..5.0f64, d * 12)))
}

proptest! {
    #[test]
    fn mahalanobis_nonnegative_and_zero_at_mean((d, data) in points(5), q in prop::collection::vec(-9.0..9.0f64, 5)) {
        let rows: Vec<Vec<f64>> = data.chunks(d).map(|c| c.to_vec()).collect();
        let labels: Vec<u32> = (0..rows.len()).map(|i| (i % 2) as u32).collect();
        let s = fit_stats(&emb(&rows, &labels), &FitOptions::default()).unwrap();
        for c in 0..2 {
            prop_assert!(mahalanobis(&q[..d], &s, c) >= 0.0);
            prop_assert!(mahalanobis(&s.means[c].clone(), &s, c) < 1e-8);
        }
    }

    #[test]
    fn isotropic_covariance_preserves_euclidean_argmin(
        centers in prop::collection::vec(-5.0..5.0f64, 6),
        q in prop::collection::vec(-8.0..8.0f64, 2),
    ) {
        // every class is the same symmetric 4-point cross, so each covariance is exactly I
        let a = 1.5f64.sqrt();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, m) in centers.chunks(2).enumerate() {
            for (dx, dy) in [(a, 0.0), (-a, 0.0), (0.0, a), (0.0, -a)] {
                rows.push(vec![m[0] + dx, m[1] + dy]);
                labels.push(c as u32);
            }
        }
        let s = fit_stats(&emb(&rows, &labels), &FitOptions::default()).unwrap();
        let (_, cm) = distance_score(&q, &s, Metric::Mahalanobis).unwrap();
        let (_, ce) = distance_score(&q, &s, Metric::Euclidean).unwrap();
        prop_assert_eq!(cm, ce);
    }

    #[test]
    fn scaling_invariances((d, data) in points(4), scale in 0.01..100.0f64, q in prop::collection::vec(-9.0..9.0f64, 4)) {
        let rows: Vec<Vec<f64>> = data.chunks(d).map(|c| c.to_vec()).collect();
        let labels: Vec<u32> = (0..rows.len()).map(|i| (i % 3) as u32).collect();
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
        let qs: Vec<f64> = q[..d].iter().map(|v| v * scale).collect();
        prop_assume!(q[..d].iter().any(|v| *v != 0.0));

        let a = fit_stats(&emb(&rows, &labels), &FitOptions::metric(Metric::Cosine)).unwrap();
        let b = fit_stats(&emb(&scaled, &labels), &FitOptions::metric(Metric::Cosine)).unwrap();
        let (da, ca) = distance_score(&q[..d], &a, Metric::Cosine).unwrap();
        let (db, cb) = distance_score(&qs, &b, Metric::Cosine).unwrap();
        prop_assert!((da - db).abs() < 1e-9);
        prop_assert_eq!(ca, cb);

        let a = fit_stats(&emb(&rows, &labels), &FitOptions::default()).unwrap();
        let b = fit_stats(&emb(&scaled, &labels), &FitOptions::default()).unwrap();
        let per_a: Vec<f64> = (0..3).map(|c| mahalanobis(&q[..d], &a, c)).collect();
        let (_, ca) = distance_score(&q[..d], &a, Metric::Mahalanobis).unwrap();
        let (_, cb) = distance_score(&qs, &b, Metric::Mahalanobis).unwrap();
        let mut sorted = per_a.clone();
        sorted.sort_by(f64::total_cmp);
        // skip near-ties where rounding may legitimately flip the winner
        prop_assume!(sorted[1] - sorted[0] > 1e-6 * sorted[1].max(1.0));
        prop_assert_eq!(ca, cb);
    }

    #[test]
    fn decide_is_pure(x in -5.0..5.0f64, l in prop::collection::vec(-3.0..3.0f64, 2)) {
        let s = one_class();
        let t = Thresholds::new(2.0, 0.6).unwrap();
        let a = decide(&[x], &l, &s, &t, Metric::Euclidean).unwrap();
        let b = decide(&[x], &l, &s, &t, Metric::Euclidean).unwrap();
        prop_assert_eq!(a.clone(), b);
        prop_assert_eq!(a.is_outlier, a.distance > 2.0 || a.confidence < 0.6);
    }
}
