use std::collections::BTreeMap;

use autolabel_core::autolabel::{
    refine_dataset, select_threshold, temporal_refine, threshold_filter, RefinementParams,
};
use autolabel_core::geometry::{iou_bev, Box3D};
use autolabel_core::labels::{Dataset, Frame, ObjectLabel, RoadType, WeatherCondition};
use autolabel_core::simdet::{generate_truth, inject_intermittent_errors, ScenarioParams};
use proptest::prelude::*;

fn arb_label(with_conf: bool) -> impl Strategy<Value = ObjectLabel> {
    (
        -8.0..8.0f64,
        -8.0..8.0f64,
        2.0..5.0f64,
        1.5..2.5f64,
        -3.0..3.0f64,
        0.0..=1.0f64,
    )
        .prop_map(move |(cx, cy, l, w, yaw, c)| ObjectLabel {
            class_name: "Sedan".into(),
            bbox: Box3D::new(cx, cy, 0.0, l, w, 1.5, yaw).unwrap(),
            confidence: with_conf.then_some(c),
            object_id: None,
        })
}

fn arb_sequence() -> impl Strategy<Value = Vec<Frame>> {
    prop::collection::vec(prop::collection::vec(arb_label(true), 0..5), 1..7).prop_map(|frames| {
        frames
            .into_iter()
            .enumerate()
            .map(|(i, objects)| {
                Frame::new("s", 2 * i as u64, WeatherCondition::Rain, RoadType::Highway).with_objects(objects)
            })
            .collect()
    })
}

fn arb_pair() -> impl Strategy<Value = (Dataset, Dataset)> {
    prop::collection::vec(
        (
            prop::collection::vec(arb_label(true), 0..8),
            prop::collection::vec(arb_label(false), 0..6),
        ),
        1..4,
    )
    .prop_map(|frames| {
        let (mut d, mut t) = (Vec::new(), Vec::new());
        for (i, (dets, gts)) in frames.into_iter().enumerate() {
            d.push(Frame::new("s", i as u64, WeatherCondition::Fog, RoadType::Urban).with_objects(dets));
            t.push(Frame::new("s", i as u64, WeatherCondition::Fog, RoadType::Urban).with_objects(gts));
        }
        (
            Dataset::from_frames("d", d).unwrap(),
            Dataset::from_frames("t", t).unwrap(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn threshold_count_monotone(objects in prop::collection::vec(arb_label(true), 0..12), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let f = Frame::new("s", 0, WeatherCondition::Normal, RoadType::Urban).with_objects(objects);
        prop_assert_eq!(&threshold_filter(&f, 0.0).unwrap(), &f);
        let (lo, hi) = (a.min(b), a.max(b));
        let n_lo = threshold_filter(&f, lo).unwrap().objects.len();
        let n_hi = threshold_filter(&f, hi).unwrap().objects.len();
        prop_assert!(n_hi <= n_lo);
        prop_assert!(threshold_filter(&f, hi).unwrap().objects.iter().all(|o| o.confidence.unwrap() >= hi));
    }

    #[test]
    fn sweep_recall_monotone_and_best_is_argmax((dets, truth) in arb_pair(), taus in prop::collection::vec(0.0..=1.0f64, 1..6)) {
        let report = select_threshold(&dets, &truth, &taus, 0.3).unwrap();
        for w in report.rows.windows(2) {
            prop_assert!(w[0].tau < w[1].tau);
            prop_assert!(w[1].recall <= w[0].recall);
        }
        let best = report.rows.iter().find(|r| r.tau == report.best_tau).unwrap();
        prop_assert!(report.rows.iter().all(|r| r.f1 <= best.f1));
        let first_best = report.rows.iter().find(|r| r.f1 == best.f1).unwrap();
        prop_assert_eq!(first_best.tau, report.best_tau);
    }

    #[test]
    fn refine_leaves_ends_alone(seq in arb_sequence()) {
        let r = temporal_refine(&seq, &RefinementParams::default()).unwrap();
        prop_assert_eq!(r.frames.len(), seq.len());
        prop_assert_eq!(&r.frames[0], &seq[0]);
        prop_assert_eq!(r.frames.last(), seq.last());
    }

    #[test]
    fn refine_identity_on_static_sequence(objects in prop::collection::vec(arb_label(true), 0..6), n in 1usize..6) {
        let seq: Vec<Frame> = (0..n)
            .map(|i| Frame::new("s", i as u64, WeatherCondition::Normal, RoadType::Urban).with_objects(objects.clone()))
            .collect();
        let r = temporal_refine(&seq, &RefinementParams::default()).unwrap();
        prop_assert_eq!(r.frames, seq);
    }
}

#[test]
fn injected_errors_are_undone_on_constant_velocity_sequences() {
    let weather = BTreeMap::from([(WeatherCondition::Normal, 1.0)]);
    let road = BTreeMap::from([(RoadType::Urban, 1.0)]);
    let mut checked = 0;
    let mut skipped = 0;
    for seed in 0u64.. {
        if checked == 100 {
            break;
        }
        let params = ScenarioParams {
            n_sequences: 1,
            frames_per_sequence: 8,
            objects_per_frame_mean: 6.0,
            seed,
            ..ScenarioParams::default()
        };
        let truth = generate_truth(&params, &weather, &road).unwrap();
        // Sequences where nothing spawned have no object to remove.
        let Ok((corrupted, log)) = inject_intermittent_errors(&truth, 1, 1, seed) else {
            assert_eq!(
                truth.num_objects(),
                0,
                "seed {seed}: injection failed on a populated sequence"
            );
            skipped += 1;
            continue;
        };
        checked += 1;
        let (refined, _) = refine_dataset(&corrupted, &RefinementParams::default()).unwrap();

        let fa = &log.false_alarms[0];
        let fa_box = Box3D::from_array(fa.bbox).unwrap();
        let frames = refined.sequence(&fa.sequence_id).unwrap();
        let frame = frames.iter().find(|f| f.frame_index == fa.frame_index).unwrap();
        assert!(
            frame.objects.iter().all(|o| o.bbox != fa_box),
            "seed {seed}: false alarm survived"
        );

        let miss = &log.misses[0];
        let miss_box = Box3D::from_array(miss.bbox).unwrap();
        let frames = refined.sequence(&miss.sequence_id).unwrap();
        let frame = frames.iter().find(|f| f.frame_index == miss.frame_index).unwrap();
        let best = frame
            .objects
            .iter()
            .map(|o| iou_bev(&o.bbox, &miss_box))
            .fold(0.0, f64::max);
        assert!(best >= 0.5, "seed {seed}: miss restored with IoU {best}");
    }
    assert!(skipped <= 5, "{skipped} empty scenarios");
}
