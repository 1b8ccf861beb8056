use autolabel_core::eval::{average_precision, match_detections, precision_recall_f1, Prf};
use autolabel_core::geometry::{Box3D, IouKind};
use autolabel_core::labels::{Dataset, Frame, ObjectLabel, RoadType, WeatherCondition};
use autolabel_testkit::{ap_fixture, enumerated_ap, fixture_ranked_tp, FixtureDet};
use proptest::prelude::*;

fn arb_label(with_conf: bool) -> impl Strategy<Value = ObjectLabel> {
    (
        prop::sample::select(vec!["Sedan", "Sedan", "Truck"]),
        -6.0..6.0f64,
        -6.0..6.0f64,
        -0.5..0.5f64,
        1.0..5.0f64,
        1.0..3.0f64,
        -3.0..3.0f64,
        0u32..64,
    )
        .prop_map(move |(cls, cx, cy, cz, l, w, yaw, k)| ObjectLabel {
            class_name: cls.to_owned(),
            bbox: Box3D::new(cx, cy, cz, l, w, 1.5, yaw).unwrap(),
            confidence: with_conf.then_some(f64::from(k) / 64.0),
            object_id: None,
        })
}

fn arb_frames() -> impl Strategy<Value = (Dataset, Dataset)> {
    prop::collection::vec(
        (
            prop::collection::vec(arb_label(true), 0..7),
            prop::collection::vec(arb_label(false), 0..6),
            prop::sample::select(WeatherCondition::ALL.to_vec()),
        ),
        1..4,
    )
    .prop_map(|frames| {
        let mut dets = Vec::new();
        let mut truth = Vec::new();
        for (i, (d, t, w)) in frames.into_iter().enumerate() {
            dets.push(Frame::new("s", i as u64, w, RoadType::Urban).with_objects(d));
            truth.push(Frame::new("s", i as u64, w, RoadType::Urban).with_objects(t));
        }
        (
            Dataset::from_frames("d", dets).unwrap(),
            Dataset::from_frames("t", truth).unwrap(),
        )
    })
}

fn arb_kind() -> impl Strategy<Value = IouKind> {
    prop::sample::select(vec![IouKind::Bev, IouKind::ThreeD])
}

fn arb_fixture() -> impl Strategy<Value = (usize, Vec<FixtureDet>)> {
    (0usize..5).prop_flat_map(|n_truth| {
        let det = (0u32..6, prop::option::of(0..n_truth.max(1))).prop_map(move |(c, t)| FixtureDet {
            confidence: f64::from(c) / 5.0,
            on_truth: if n_truth == 0 { None } else { t },
        });
        (Just(n_truth), prop::collection::vec(det, 0..=10))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn count_identities(
        dets in prop::collection::vec(arb_label(true), 0..8),
        gts in prop::collection::vec(arb_label(false), 0..8),
        kind in arb_kind(),
        thresh in 0.05..0.95f64,
    ) {
        let m = match_detections(&dets, &gts, kind, thresh, "Sedan").unwrap();
        let n_det = dets.iter().filter(|d| d.class_name == "Sedan").count();
        let n_gt = gts.iter().filter(|g| g.class_name == "Sedan").count();
        prop_assert_eq!(m.tp + m.fn_, n_gt);
        prop_assert_eq!(m.tp + m.fp, n_det);
        prop_assert_eq!(m.tp, m.matched_pairs.len());
        for p in &m.matched_pairs {
            prop_assert!(p.iou >= thresh);
            prop_assert_eq!(dets[p.det_index].class_name.as_str(), "Sedan");
            prop_assert_eq!(gts[p.gt_index].class_name.as_str(), "Sedan");
        }
        let prf = precision_recall_f1(&m);
        for v in [prf.precision, prf.recall, prf.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn higher_threshold_never_adds_matches(
        dets in prop::collection::vec(arb_label(true), 0..8),
        gts in prop::collection::vec(arb_label(false), 0..8),
        kind in arb_kind(),
        lo in 0.05..0.95f64,
        hi in 0.05..0.95f64,
    ) {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let m_lo = match_detections(&dets, &gts, kind, lo, "Sedan").unwrap();
        let m_hi = match_detections(&dets, &gts, kind, hi, "Sedan").unwrap();
        prop_assert!(m_hi.tp <= m_lo.tp, "tp {} at {} vs {} at {}", m_hi.tp, hi, m_lo.tp, lo);
    }

    #[test]
    fn ap_bounded_and_rank_only((dets, truth) in arb_frames(), kind in arb_kind()) {
        let ap = average_precision(&dets, &truth, kind, 0.3, "Sedan").unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        // Strictly increasing map of the k/64 grid onto a different spacing.
        let squashed = dets.map_frames(|f| {
            let mut f = f.clone();
            for o in &mut f.objects {
                o.confidence = o.confidence.map(|c| (c * c + c) / 2.0);
            }
            f
        });
        let ap2 = average_precision(&squashed, &truth, kind, 0.3, "Sedan").unwrap();
        prop_assert_eq!(ap, ap2);
    }

    #[test]
    fn perfect_detector_scores_one((_, truth) in arb_frames()) {
        let dets = truth.map_frames(|f| {
            let mut f = f.clone();
            for o in &mut f.objects {
                o.confidence = Some(1.0);
            }
            f
        });
        for kind in [IouKind::Bev, IouKind::ThreeD] {
            prop_assert_eq!(average_precision(&dets, &truth, kind, 0.3, "Sedan").unwrap(), 1.0);
            for (d, t) in dets.frames().zip(truth.frames()) {
                let m = match_detections(&d.objects, &t.objects, kind, 0.3, "Sedan").unwrap();
                prop_assert_eq!(precision_recall_f1(&m), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
            }
        }
    }

    #[test]
    fn ap_matches_enumerated_curve((n_truth, fixture) in arb_fixture()) {
        let (dets, truth) = ap_fixture(n_truth, &fixture);
        let expected = enumerated_ap(&fixture_ranked_tp(&fixture), n_truth).to_f64();
        for kind in [IouKind::Bev, IouKind::ThreeD] {
            let ap = average_precision(&dets, &truth, kind, 0.3, "Sedan").unwrap();
            prop_assert!((ap - expected).abs() <= 1e-12, "ap {} vs oracle {}", ap, expected);
        }
    }
}

#[test]
fn hand_fixture_five_sixths() {
    let fixture = [
        FixtureDet {
            confidence: 0.9,
            on_truth: Some(0),
        },
        FixtureDet {
            confidence: 0.8,
            on_truth: None,
        },
        FixtureDet {
            confidence: 0.7,
            on_truth: Some(1),
        },
    ];
    let (dets, truth) = ap_fixture(2, &fixture);
    let oracle = enumerated_ap(&fixture_ranked_tp(&fixture), 2);
    assert_eq!((oracle.num, oracle.den), (5, 6));
    let ap = average_precision(&dets, &truth, IouKind::Bev, 0.3, "Sedan").unwrap();
    assert!((ap - 5.0 / 6.0).abs() <= 1e-12);
}
