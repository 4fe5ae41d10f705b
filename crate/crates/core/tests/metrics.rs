use forgery_ensemble::metrics::{
    ba_attribution, ba_attribution_with, ba_detection, ba_detection_with, ConfusionMatrix, MetricMode,
    MetricsError,
};
use proptest::prelude::*;

fn recall(rows: &[Vec<u64>], c: usize) -> Option<f64> {
    let support: u64 = rows[c].iter().sum();
    (support > 0).then(|| rows[c][c] as f64 / support as f64)
}

/// Real recall weighted 1/2, manipulation recalls sharing the other 1/2.
fn reference_attribution(rows: &[Vec<u64>]) -> Option<f64> {
    let k = rows.len() - 1;
    let r0 = recall(rows, 0)?;
    let mut fake = 0.0;
    for c in 1..=k {
        fake += recall(rows, c)?;
    }
    Some(0.5 * r0 + 0.5 * fake / k as f64)
}

fn reference_detection(rows: &[Vec<u64>]) -> Option<f64> {
    Some(0.5 * recall(rows, 0)? + 0.5 * recall(rows, 1)?)
}

fn reference_lenient(rows: &[Vec<u64>]) -> Option<(f64, Vec<usize>)> {
    let k = rows.len() - 1;
    let excluded: Vec<usize> = (0..=k).filter(|&c| recall(rows, c).is_none()).collect();
    let fake: Vec<f64> = (1..=k).filter_map(|c| recall(rows, c)).collect();
    let value = match (recall(rows, 0), fake.is_empty()) {
        (Some(r0), false) => 0.5 * r0 + 0.5 * fake.iter().sum::<f64>() / fake.len() as f64,
        (Some(r0), true) => r0,
        (None, false) => fake.iter().sum::<f64>() / fake.len() as f64,
        (None, true) => return None,
    };
    Some((value, excluded))
}

fn matrix(classes: std::ops::Range<usize>, zero_rows: bool) -> impl Strategy<Value = Vec<Vec<u64>>> {
    classes.prop_flat_map(move |n| {
        let cell = if zero_rows { 0u64..4 } else { 0u64..1000 };
        prop::collection::vec(prop::collection::vec(cell, n), n).prop_map(move |mut rows| {
            if !zero_rows {
                for (i, row) in rows.iter_mut().enumerate() {
                    row[i] += 1;
                }
            }
            rows
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn attribution_matches_recall_reference(rows in matrix(2..12, false)) {
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        let got = ba_attribution(&cm).unwrap();
        let want = reference_attribution(&rows).unwrap();
        prop_assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn detection_matches_recall_reference(rows in matrix(2..3, false)) {
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        let got = ba_detection(&cm).unwrap();
        prop_assert!((got - reference_detection(&rows).unwrap()).abs() <= 1e-12);
        // One manipulation: the attribution average is the detection average.
        prop_assert_eq!(ba_attribution(&cm).unwrap(), got);
    }

    #[test]
    fn collapsed_detection_matches_reference(rows in matrix(2..10, false)) {
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        let collapsed: Vec<Vec<u64>> = (0..2)
            .map(|t| {
                (0..2)
                    .map(|p| {
                        let mut sum = 0;
                        for (i, row) in rows.iter().enumerate() {
                            for (j, &v) in row.iter().enumerate() {
                                if (i > 0) as usize == t && (j > 0) as usize == p {
                                    sum += v;
                                }
                            }
                        }
                        sum
                    })
                    .collect()
            })
            .collect();
        prop_assert_eq!(cm.collapse_to_detection().rows(), collapsed.clone());
        let got = ba_detection(&cm.collapse_to_detection()).unwrap();
        prop_assert!((got - reference_detection(&collapsed).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn lenient_mode_matches_reference(rows in matrix(2..8, true)) {
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        match (ba_attribution_with(&cm, MetricMode::Lenient), reference_lenient(&rows)) {
            (Ok(ba), Some((value, excluded))) => {
                prop_assert!((ba.value - value).abs() <= 1e-12);
                prop_assert_eq!(ba.excluded_classes, excluded);
            }
            (Err(_), None) => {}
            (got, want) => prop_assert!(false, "{got:?} vs {want:?}"),
        }
        let strict = ba_attribution_with(&cm, MetricMode::Strict);
        let any_empty = (0..rows.len()).any(|c| recall(&rows, c).is_none());
        prop_assert_eq!(strict.is_err(), any_empty);
    }

    #[test]
    fn merging_partial_matrices_equals_one_pass(
        labels in prop::collection::vec((0usize..6, 0usize..6), 0..10_000),
        cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..8),
    ) {
        let mut whole = ConfusionMatrix::new(6).unwrap();
        for &(t, p) in &labels {
            whole.accumulate(t, p).unwrap();
        }
        let mut bounds: Vec<usize> = cuts.iter().map(|c| c.index(labels.len() + 1)).collect();
        bounds.extend([0, labels.len()]);
        bounds.sort_unstable();
        let parts: Vec<ConfusionMatrix> = bounds
            .windows(2)
            .map(|w| {
                let mut cm = ConfusionMatrix::new(6).unwrap();
                for &(t, p) in &labels[w[0]..w[1]] {
                    cm.accumulate(t, p).unwrap();
                }
                cm
            })
            .collect();
        // Merge back to front to exercise a different association.
        let mut merged = ConfusionMatrix::new(6).unwrap();
        for part in parts.iter().rev() {
            merged.merge(part).unwrap();
        }
        prop_assert_eq!(merged, whole);
    }
}

#[test]
fn attribution_at_k1_is_detection_on_a_fixed_case() {
    let cm = ConfusionMatrix::from_rows(&[vec![7, 3], vec![2, 8]]).unwrap();
    assert_eq!(ba_attribution(&cm), ba_detection(&cm));
    assert_eq!(ba_detection(&cm).unwrap(), 0.5 * 0.7 + 0.5 * 0.8);
}

#[test]
fn mismatched_shapes_are_rejected() {
    let mut a = ConfusionMatrix::new(3).unwrap();
    let b = ConfusionMatrix::new(4).unwrap();
    assert!(a.merge(&b).is_err());
    assert!(a.accumulate(3, 0).is_err());
    assert_eq!(ConfusionMatrix::new(1), Err(MetricsError::TooFewClasses(1)));
}

#[test]
fn lenient_detection_falls_back_to_the_present_half() {
    let cm = ConfusionMatrix::from_rows(&[vec![6, 4], vec![0, 0]]).unwrap();
    assert_eq!(ba_detection(&cm), Err(MetricsError::EmptyClass(1)));
    let ba = ba_detection_with(&cm, MetricMode::Lenient).unwrap();
    assert_eq!(ba.value, 0.6);
    assert_eq!(ba.excluded_classes, vec![1]);
}
