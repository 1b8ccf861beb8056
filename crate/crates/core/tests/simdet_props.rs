use std::collections::BTreeMap;

use autolabel_core::autolabel::{refine_dataset, RefinementParams};
use autolabel_core::eval::match_datasets;
use autolabel_core::geometry::{iou_bev, Box3D, IouKind};
use autolabel_core::labels::{write_dataset, Dataset, RoadType, WeatherCondition};
use autolabel_core::simdet::{
    generate_truth, inject_intermittent_errors, simulate_detector, uniform_road_mix, uniform_weather_mix,
    DetectorNoiseModel, ScenarioParams,
};
use proptest::prelude::*;

fn bytes(d: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    write_dataset(d, &mut buf).unwrap();
    buf
}

fn pipeline(seed: u64) -> (Vec<u8>, Vec<u8>) {
    let params = ScenarioParams {
        n_sequences: 12,
        seed,
        ..ScenarioParams::default()
    };
    let truth = generate_truth(&params, &uniform_weather_mix(), &uniform_road_mix()).unwrap();
    let dets = simulate_detector(
        &truth,
        &DetectorNoiseModel::default(),
        &params.field_of_view,
        params.ground_z,
        seed ^ 0xdead_beef,
    )
    .unwrap();
    (bytes(&truth), bytes(&dets))
}

#[test]
fn deterministic_across_thread_counts() {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
    for seed in [0, 1, 99] {
        let a = single.install(|| pipeline(seed));
        let b = many.install(|| pipeline(seed));
        assert_eq!(a, b, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn detections_are_well_formed(seed in any::<u64>(), scale in 0.0..4.0f64) {
        let params = ScenarioParams { n_sequences: 3, seed, ..ScenarioParams::default() };
        let truth = generate_truth(&params, &uniform_weather_mix(), &uniform_road_mix()).unwrap();
        let mut noise = DetectorNoiseModel::default();
        for n in noise.per_weather.values_mut() {
            n.pos_sigma *= scale;
            n.dim_sigma *= scale;
            n.yaw_sigma *= scale;
        }
        let dets = simulate_detector(&truth, &noise, &params.field_of_view, params.ground_z, seed).unwrap();
        prop_assert_eq!(dets.frame_keys(), truth.frame_keys());
        for f in dets.frames() {
            for o in &f.objects {
                let c = o.confidence.unwrap();
                prop_assert!((0.0..=1.0).contains(&c));
                prop_assert!(o.bbox.to_array().iter().all(|v| v.is_finite()));
            }
        }
    }
}

fn recall_under(weather: WeatherCondition, seed: u64) -> f64 {
    let params = ScenarioParams {
        n_sequences: 10,
        seed,
        ..ScenarioParams::default()
    };
    let truth = generate_truth(&params, &BTreeMap::from([(weather, 1.0)]), &uniform_road_mix()).unwrap();
    let dets = simulate_detector(
        &truth,
        &DetectorNoiseModel::default(),
        &params.field_of_view,
        params.ground_z,
        seed,
    )
    .unwrap();
    let m = match_datasets(&dets, &truth, IouKind::Bev, 0.3, "Sedan").unwrap();
    m.tp as f64 / (m.tp + m.fn_) as f64
}

#[test]
fn severe_weather_lowers_recall() {
    for severe in [WeatherCondition::Sleet, WeatherCondition::HeavySnow] {
        let holds = (0..20)
            .filter(|&seed| recall_under(severe, seed) <= recall_under(WeatherCondition::Normal, seed))
            .count();
        assert!(holds >= 19, "{severe}: held in {holds}/20 seeds");
    }
}

#[test]
fn refinement_recovers_injected_errors() {
    let (mut misses, mut restored, mut fas, mut removed) = (0, 0, 0, 0);
    for seed in 0..100u64 {
        let params = ScenarioParams {
            n_sequences: 4,
            seed,
            ..ScenarioParams::default()
        };
        let truth = generate_truth(
            &params,
            &BTreeMap::from([(WeatherCondition::Normal, 1.0)]),
            &BTreeMap::from([(RoadType::Urban, 1.0)]),
        )
        .unwrap();
        let (corrupted, log) = inject_intermittent_errors(&truth, 2, 2, seed).unwrap();
        let (refined, _) = refine_dataset(&corrupted, &RefinementParams::default()).unwrap();
        let frame_of = |seq: &str, idx: u64| {
            refined
                .sequence(seq)
                .and_then(|fs| fs.iter().find(|f| f.frame_index == idx))
                .unwrap()
                .clone()
        };
        for m in &log.misses {
            misses += 1;
            let b = Box3D::from_array(m.bbox).unwrap();
            let f = frame_of(&m.sequence_id, m.frame_index);
            restored += usize::from(f.objects.iter().any(|o| iou_bev(&o.bbox, &b) >= 0.5));
        }
        for fa in &log.false_alarms {
            fas += 1;
            let b = Box3D::from_array(fa.bbox).unwrap();
            let f = frame_of(&fa.sequence_id, fa.frame_index);
            removed += usize::from(f.objects.iter().all(|o| o.bbox != b));
        }
    }
    assert!(restored * 100 >= misses * 95, "restored {restored}/{misses}");
    assert!(removed * 100 >= fas * 95, "removed {removed}/{fas}");
}
