use std::collections::BTreeMap;

use forgery_ensemble::aggregation::{aggregate_faces, AggregationPolicy, FaceScore, Pooling};
use forgery_ensemble::domain::DetectionLabel;
use forgery_ensemble::ensemble::{combine, Design, EnsembleConfig, ScoreKind, ScoreTensor};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Face {
    video: String,
    identity: String,
    score: f64,
}

fn faces() -> impl Strategy<Value = Vec<Face>> {
    prop::collection::vec((0u8..6, 0u8..3, 0u32..=1000), 1..60).prop_map(|raw| {
        raw.into_iter()
            .map(|(v, p, s)| Face {
                video: format!("v{v}"),
                identity: format!("p{p}"),
                score: s as f64 / 1000.0,
            })
            .collect()
    })
}

fn pooling() -> impl Strategy<Value = Pooling> {
    prop_oneof![Just(Pooling::Mean), Just(Pooling::Max), Just(Pooling::Median)]
}

fn policy() -> impl Strategy<Value = AggregationPolicy> {
    (pooling(), pooling(), 0u32..=20).prop_map(|(identity_pooling, video_pooling, t)| AggregationPolicy {
        identity_pooling,
        video_pooling,
        video_threshold: t as f64 / 20.0,
    })
}

fn run(faces: &[Face], policy: &AggregationPolicy) -> Vec<forgery_ensemble::aggregation::VideoVerdict> {
    aggregate_faces(
        faces.iter().map(|f| FaceScore {
            video_id: &f.video,
            identity_id: &f.identity,
            fake_score: f.score,
        }),
        policy,
    )
    .unwrap()
}

fn reference_pool(pooling: Pooling, values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match pooling {
        Pooling::Mean => v.iter().sum::<f64>() / v.len() as f64,
        Pooling::Max => *v.last().unwrap(),
        Pooling::Median if v.len() % 2 == 1 => v[v.len() / 2],
        Pooling::Median => (v[v.len() / 2 - 1] + v[v.len() / 2]) / 2.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn verdicts_ignore_face_order(faces in faces(), policy in policy(), seed in any::<u64>()) {
        let mut shuffled = faces.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 0x9e37) >> 7) as usize % (i + 1));
        }
        prop_assert_eq!(run(&faces, &policy), run(&shuffled, &policy));
    }

    #[test]
    fn verdicts_match_reference_grouping(faces in faces(), policy in policy()) {
        let mut grouped: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
        for f in &faces {
            grouped.entry(&f.video).or_default().entry(&f.identity).or_default().push(f.score);
        }
        let verdicts = run(&faces, &policy);
        prop_assert_eq!(verdicts.len(), grouped.len());
        for (verdict, (video, identities)) in verdicts.iter().zip(&grouped) {
            prop_assert_eq!(&verdict.video_id, video);
            let identity_scores: Vec<f64> = identities
                .values()
                .map(|s| reference_pool(policy.identity_pooling, s))
                .collect();
            let score = reference_pool(policy.video_pooling, &identity_scores);
            prop_assert!((verdict.video_fake_score - score).abs() <= 1e-12);
            prop_assert_eq!(verdict.contributing_faces, identities.values().map(Vec::len).sum::<usize>());
            let expected = if verdict.video_fake_score > policy.video_threshold {
                DetectionLabel::Fake
            } else {
                DetectionLabel::Real
            };
            prop_assert_eq!(verdict.video_z_hat, expected);
        }
    }

    #[test]
    fn raising_a_face_score_never_lowers_its_video(
        faces in faces(),
        policy in policy(),
        which in any::<prop::sample::Index>(),
        bump in 0u32..=1000,
    ) {
        let before = run(&faces, &policy);
        let mut raised = faces.clone();
        let i = which.index(faces.len());
        raised[i].score = (raised[i].score + bump as f64 / 1000.0).min(1.0);
        let after = run(&raised, &policy);
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(a.video_fake_score >= b.video_fake_score);
            if b.video_z_hat == DetectionLabel::Fake {
                prop_assert_eq!(a.video_z_hat, DetectionLabel::Fake);
            }
        }
    }

    #[test]
    fn single_face_video_keeps_the_face_decision(
        fake in prop::collection::vec(0u32..=1000, 1..6),
        t in 0u32..=20,
        policy in policy(),
    ) {
        let rows: Vec<Vec<f64>> = fake.iter().map(|&n| {
            let p = n as f64 / 1000.0;
            vec![1.0 - p, p]
        }).collect();
        let ids = (0..rows.len()).map(|i| format!("sp{i}")).collect();
        let tensor = ScoreTensor::new("s", ScoreKind::PerManipulation, ids, rows).unwrap();
        let t = t as f64 / 20.0;
        let decision = combine(&tensor, &EnsembleConfig::new(Design::OneVsReal, fake.len(), t).unwrap()).unwrap();
        let policy = AggregationPolicy { video_threshold: t, ..policy };
        let face = Face { video: "v".into(), identity: "p".into(), score: decision.fake_score };
        let verdicts = run(&[face], &policy);
        prop_assert_eq!(verdicts.len(), 1);
        prop_assert_eq!(verdicts[0].video_fake_score, decision.fake_score);
        prop_assert_eq!(verdicts[0].video_z_hat, decision.z_hat);
        prop_assert_eq!(verdicts[0].contributing_faces, 1);
    }
}

#[test]
fn one_fake_identity_makes_the_video_fake_under_max() {
    let faces = [
        Face { video: "v".into(), identity: "a".into(), score: 0.1 },
        Face { video: "v".into(), identity: "a".into(), score: 0.2 },
        Face { video: "v".into(), identity: "b".into(), score: 0.9 },
        Face { video: "v".into(), identity: "b".into(), score: 0.7 },
    ];
    let verdicts = run(&faces, &AggregationPolicy::default());
    assert_eq!(verdicts[0].video_z_hat, DetectionLabel::Fake);
    assert_eq!(verdicts[0].per_identity_scores["b"], 0.8);
}
