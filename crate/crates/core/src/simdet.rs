//! Synthetic scenario generator and detector stand-in.
//!
//! Ground truth is constant-velocity traffic inside a rectangular field of
//! view. The detector drops objects, perturbs boxes, scores them by the size
//! of the perturbation and adds spurious boxes, all conditioned on the frame
//! weather. Every random draw comes from a ChaCha stream named after
//! `(purpose, sequence)`, so results do not depend on thread scheduling.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autolabel::{match_frames, DEFAULT_MATCH_IOU};
use crate::geometry::{box_to_bev_polygon, iou_bev, Box3D};
use crate::labels::{Dataset, Frame, ObjectLabel, RoadType, WeatherCondition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid parameter `{field}`: {message}")]
    InvalidParam { field: String, message: String },
    #[error("invalid mix `{name}`: {message}")]
    InvalidMix { name: &'static str, message: String },
    #[error("cannot inject {requested} {what}: only {available} eligible")]
    NotEnoughEligible {
        what: &'static str,
        requested: usize,
        available: usize,
    },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> SimError {
    SimError::InvalidParam {
        field: field.into(),
        message: message.into(),
    }
}

fn check_range(field: &str, r: [f64; 2], strictly_positive: bool) -> Result<(), SimError> {
    if !r[0].is_finite() || !r[1].is_finite() {
        return Err(invalid(field, "bounds must be finite"));
    }
    if r[0] > r[1] {
        return Err(invalid(field, format!("empty range [{}, {}]", r[0], r[1])));
    }
    if strictly_positive && r[0] <= 0.0 {
        return Err(invalid(field, "lower bound must be positive"));
    }
    Ok(())
}

fn check_ratio(field: String, v: f64) -> Result<(), SimError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(field, format!("{v} is not in [0, 1]")));
    }
    Ok(())
}

fn check_non_negative(field: String, v: f64) -> Result<(), SimError> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid(field, format!("{v} must be finite and >= 0")));
    }
    Ok(())
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * sigma
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(mean).expect("positive finite mean").sample(rng);
    draw as usize
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// RNG stream for one `(purpose, key)` pair under a master seed.
pub fn stream_rng(seed: u64, purpose: &str, key: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(format!("{purpose}/{key}").as_bytes()));
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldOfView {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
}

impl Default for FieldOfView {
    fn default() -> Self {
        Self {
            x_range: [0.0, 72.0],
            y_range: [-32.0, 32.0],
        }
    }
}

impl FieldOfView {
    pub fn validate(&self, field: &str) -> Result<(), SimError> {
        check_range(&format!("{field}.x_range"), self.x_range, false)?;
        check_range(&format!("{field}.y_range"), self.y_range, false)?;
        if self.x_range[0] == self.x_range[1] || self.y_range[0] == self.y_range[1] {
            return Err(invalid(field, "field of view has zero area"));
        }
        Ok(())
    }

    /// Whether the whole footprint lies inside.
    pub fn contains_box(&self, b: &Box3D) -> bool {
        box_to_bev_polygon(b).vertices().iter().all(|[x, y]| {
            (self.x_range[0]..=self.x_range[1]).contains(x) && (self.y_range[0]..=self.y_range[1]).contains(y)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsRanges {
    pub length: [f64; 2],
    pub width: [f64; 2],
    pub height: [f64; 2],
}

impl Default for DimsRanges {
    fn default() -> Self {
        Self {
            length: [3.6, 5.0],
            width: [1.7, 2.0],
            height: [1.4, 1.7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    pub n_sequences: usize,
    pub frames_per_sequence: usize,
    pub objects_per_frame_mean: f64,
    pub field_of_view: FieldOfView,
    /// Speed along the heading, meters per frame.
    pub velocity_range: [f64; 2],
    pub dims_ranges: DimsRanges,
    /// z of the ground plane; box centers sit half a height above it.
    pub ground_z: f64,
    pub classes: Vec<String>,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n_sequences: 20,
            frames_per_sequence: 10,
            objects_per_frame_mean: 8.0,
            field_of_view: FieldOfView::default(),
            velocity_range: [0.0, 0.8],
            dims_ranges: DimsRanges::default(),
            ground_z: -1.7,
            classes: vec!["Sedan".to_owned()],
            seed: 0,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_sequences < 1 {
            return Err(invalid("n_sequences", "must be at least 1"));
        }
        if self.frames_per_sequence < 1 {
            return Err(invalid("frames_per_sequence", "must be at least 1"));
        }
        if !(self.objects_per_frame_mean.is_finite() && self.objects_per_frame_mean > 0.0) {
            return Err(invalid("objects_per_frame_mean", "must be a positive number"));
        }
        self.field_of_view.validate("field_of_view")?;
        check_range("velocity_range", self.velocity_range, false)?;
        if self.velocity_range[0] < 0.0 {
            return Err(invalid("velocity_range", "speeds must be non-negative"));
        }
        check_range("dims_ranges.length", self.dims_ranges.length, true)?;
        check_range("dims_ranges.width", self.dims_ranges.width, true)?;
        check_range("dims_ranges.height", self.dims_ranges.height, true)?;
        if !self.ground_z.is_finite() {
            return Err(invalid("ground_z", "must be finite"));
        }
        if self.classes.is_empty() || self.classes.iter().any(String::is_empty) {
            return Err(invalid("classes", "need at least one non-empty class name"));
        }
        Ok(())
    }
}

/// Checks a categorical mix: ratios in `[0, 1]` summing to 1 within 1e-9.
pub fn validate_mix<K: Ord + std::fmt::Display>(name: &'static str, mix: &BTreeMap<K, f64>) -> Result<(), SimError> {
    if mix.is_empty() {
        return Err(SimError::InvalidMix {
            name,
            message: "no entries".into(),
        });
    }
    for (k, v) in mix {
        if !(0.0..=1.0).contains(v) {
            return Err(SimError::InvalidMix {
                name,
                message: format!("weight {v} for `{k}` is not in [0, 1]"),
            });
        }
    }
    let total: f64 = mix.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SimError::InvalidMix {
            name,
            message: format!("weights sum to {total}, expected 1"),
        });
    }
    Ok(())
}

pub fn uniform_weather_mix() -> BTreeMap<WeatherCondition, f64> {
    WeatherCondition::ALL.iter().map(|w| (*w, 1.0 / 7.0)).collect()
}

pub fn uniform_road_mix() -> BTreeMap<RoadType, f64> {
    RoadType::ALL.iter().map(|r| (*r, 1.0 / 7.0)).collect()
}

fn sample_mix<K: Copy>(rng: &mut ChaCha8Rng, mix: &BTreeMap<K, f64>) -> K {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (k, w) in mix {
        if *w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(*k);
        if u < acc {
            return *k;
        }
    }
    last.expect("validated mix has a positive weight")
}

/// One constant-velocity object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub id: String,
    pub class_name: String,
    /// Box at frame 0.
    pub start: Box3D,
    /// Displacement per frame, meters.
    pub velocity: [f64; 2],
}

impl ObjectTrack {
    pub fn box_at(&self, frame: u64) -> Box3D {
        let t = frame as f64;
        self.start
            .with_center(
                self.start.cx() + self.velocity[0] * t,
                self.start.cy() + self.velocity[1] * t,
                self.start.cz(),
            )
            .expect("finite kinematics")
    }

    fn radius(&self) -> f64 {
        self.start.length().hypot(self.start.width()) / 2.0
    }
}

/// Lateral gap kept between spawned trajectories, meters.
const TRACK_CLEARANCE: f64 = 2.0;
const SPAWN_ATTEMPTS: usize = 50;

fn tracks_conflict(a: &ObjectTrack, b: &ObjectTrack, frames: u64) -> bool {
    let min_gap = a.radius() + b.radius() + TRACK_CLEARANCE;
    (0..frames).any(|t| {
        let (pa, pb) = (a.box_at(t), b.box_at(t));
        (pa.cx() - pb.cx()).hypot(pa.cy() - pb.cy()) < min_gap
    })
}

fn spawn_tracks(params: &ScenarioParams, rng: &mut ChaCha8Rng) -> Vec<ObjectTrack> {
    let fov = &params.field_of_view;
    let dims = &params.dims_ranges;
    let frames = params.frames_per_sequence as u64;
    let n = poisson(rng, params.objects_per_frame_mean);
    let mut tracks: Vec<ObjectTrack> = Vec::with_capacity(n);
    for k in 0..n {
        let class_name = params.classes[rng.random_range(0..params.classes.len())].clone();
        for _ in 0..SPAWN_ATTEMPTS {
            let length = uniform(rng, dims.length);
            let width = uniform(rng, dims.width);
            let height = uniform(rng, dims.height);
            let yaw = rng.random_range(-PI..PI);
            let speed = uniform(rng, params.velocity_range);
            let cx = uniform(rng, fov.x_range);
            let cy = uniform(rng, fov.y_range);
            let start = Box3D::new(cx, cy, params.ground_z + height / 2.0, length, width, height, yaw)
                .expect("validated ranges give valid boxes");
            if !fov.contains_box(&start) {
                continue;
            }
            let track = ObjectTrack {
                id: format!("o{k}"),
                class_name: class_name.clone(),
                start,
                velocity: [speed * yaw.cos(), speed * yaw.sin()],
            };
            if tracks.iter().all(|t| !tracks_conflict(t, &track, frames)) {
                tracks.push(track);
                break;
            }
        }
    }
    tracks
}

fn sequence_id(i: usize) -> String {
    format!("seq_{i:04}")
}

/// Generates constant-velocity ground truth.
///
/// Objects are spawned at frame 0 and dropped from the first frame where
/// their footprint leaves the field of view. Weather and road are drawn once
/// per sequence.
pub fn generate_truth(
    params: &ScenarioParams,
    weather_mix: &BTreeMap<WeatherCondition, f64>,
    road_mix: &BTreeMap<RoadType, f64>,
) -> Result<Dataset, SimError> {
    params.validate()?;
    validate_mix("weather_mix", weather_mix)?;
    validate_mix("road_mix", road_mix)?;

    let sequences: Vec<(String, Vec<Frame>)> = (0..params.n_sequences)
        .into_par_iter()
        .map(|i| {
            let id = sequence_id(i);
            let mut rng = stream_rng(params.seed, "truth", &id);
            let weather = sample_mix(&mut rng, weather_mix);
            let road = sample_mix(&mut rng, road_mix);
            let tracks = spawn_tracks(params, &mut rng);
            let mut alive = vec![true; tracks.len()];
            let frames = (0..params.frames_per_sequence as u64)
                .map(|t| {
                    let mut frame = Frame::new(id.clone(), t, weather, road);
                    for (k, track) in tracks.iter().enumerate() {
                        if !alive[k] {
                            continue;
                        }
                        let b = track.box_at(t);
                        if !params.field_of_view.contains_box(&b) {
                            alive[k] = false;
                            continue;
                        }
                        frame.objects.push(ObjectLabel {
                            class_name: track.class_name.clone(),
                            bbox: b,
                            confidence: None,
                            object_id: Some(track.id.clone()),
                        });
                    }
                    frame
                })
                .collect();
            (id, frames)
        })
        .collect();

    let mut d = Dataset::new("synthetic");
    for (id, frames) in sequences {
        d.set_sequence(id, frames);
    }
    Ok(d)
}

/// Maps box perturbation size to a confidence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfShape {
    /// Normalization scale for center offsets, meters.
    pub pos_scale: f64,
    /// Normalization scale for size errors, meters.
    pub dim_scale: f64,
    /// Normalization scale for heading errors, radians.
    pub yaw_scale: f64,
    /// Normalized perturbation at which confidence reaches the floor.
    pub d_max: f64,
    pub floor: f64,
    /// Spurious boxes score uniformly in `[floor, fa_conf_max]`.
    pub fa_conf_max: f64,
}

impl Default for ConfShape {
    fn default() -> Self {
        Self {
            pos_scale: 0.5,
            dim_scale: 0.3,
            yaw_scale: 0.2,
            d_max: 4.0,
            floor: 0.05,
            fa_conf_max: 0.4,
        }
    }
}

impl ConfShape {
    /// `clamp(1 - d / d_max, floor, 1)`.
    pub fn confidence(&self, d: f64) -> f64 {
        (1.0 - d / self.d_max).clamp(self.floor, 1.0)
    }

    fn validate(&self, field: &str) -> Result<(), SimError> {
        for (name, v) in [
            ("pos_scale", self.pos_scale),
            ("dim_scale", self.dim_scale),
            ("yaw_scale", self.yaw_scale),
            ("d_max", self.d_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{field}.{name}"), format!("{v} must be positive")));
            }
        }
        check_ratio(format!("{field}.floor"), self.floor)?;
        check_ratio(format!("{field}.fa_conf_max"), self.fa_conf_max)?;
        if self.fa_conf_max < self.floor {
            return Err(invalid(format!("{field}.fa_conf_max"), "must be >= floor"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherNoise {
    pub p_detect: f64,
    pub pos_sigma: f64,
    pub dim_sigma: f64,
    pub yaw_sigma: f64,
    /// Expected spurious boxes per frame.
    pub fa_rate: f64,
    #[serde(default)]
    pub conf_shape: ConfShape,
}

impl WeatherNoise {
    /// Detector that reports every object exactly, with confidence 1.
    pub fn perfect() -> Self {
        Self {
            p_detect: 1.0,
            pos_sigma: 0.0,
            dim_sigma: 0.0,
            yaw_sigma: 0.0,
            fa_rate: 0.0,
            conf_shape: ConfShape::default(),
        }
    }

    fn validate(&self, field: &str) -> Result<(), SimError> {
        check_ratio(format!("{field}.p_detect"), self.p_detect)?;
        check_non_negative(format!("{field}.pos_sigma"), self.pos_sigma)?;
        check_non_negative(format!("{field}.dim_sigma"), self.dim_sigma)?;
        check_non_negative(format!("{field}.yaw_sigma"), self.yaw_sigma)?;
        check_non_negative(format!("{field}.fa_rate"), self.fa_rate)?;
        self.conf_shape.validate(&format!("{field}.conf_shape"))
    }
}

/// Per-weather detector behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorNoiseModel {
    pub per_weather: BTreeMap<WeatherCondition, WeatherNoise>,
    /// Class given to spurious boxes.
    #[serde(default = "default_fa_class")]
    pub fa_class: String,
    /// Size ranges for spurious boxes.
    #[serde(default)]
    pub fa_dims: DimsRanges,
}

fn default_fa_class() -> String {
    "Sedan".into()
}

impl Default for DetectorNoiseModel {
    /// Presets degrade from clear weather to fog/rain/light snow to sleet and
    /// heavy snow.
    fn default() -> Self {
        use WeatherCondition::*;
        let clear = WeatherNoise {
            p_detect: 0.95,
            pos_sigma: 0.15,
            dim_sigma: 0.10,
            yaw_sigma: 0.05,
            fa_rate: 0.3,
            conf_shape: ConfShape::default(),
        };
        let moderate = WeatherNoise {
            p_detect: 0.90,
            pos_sigma: 0.25,
            dim_sigma: 0.15,
            yaw_sigma: 0.08,
            ..clear
        };
        let severe = WeatherNoise {
            p_detect: 0.70,
            pos_sigma: 0.50,
            dim_sigma: 0.25,
            yaw_sigma: 0.15,
            fa_rate: clear.fa_rate * 3.0,
            ..clear
        };
        let per_weather = [
            (Normal, clear),
            (Overcast, clear),
            (Fog, moderate),
            (Rain, moderate),
            (LightSnow, moderate),
            (Sleet, severe),
            (HeavySnow, severe),
        ]
        .into();
        Self {
            per_weather,
            fa_class: default_fa_class(),
            fa_dims: DimsRanges::default(),
        }
    }
}

impl DetectorNoiseModel {
    /// The same noise for every weather.
    pub fn uniform(noise: WeatherNoise) -> Self {
        Self {
            per_weather: WeatherCondition::ALL.iter().map(|w| (*w, noise)).collect(),
            ..Self::default()
        }
    }

    pub fn perfect() -> Self {
        Self::uniform(WeatherNoise::perfect())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for w in WeatherCondition::ALL {
            let noise = self
                .per_weather
                .get(&w)
                .ok_or_else(|| invalid(format!("noise.{w}"), "missing preset"))?;
            noise.validate(&format!("noise.{w}"))?;
        }
        if self.fa_class.is_empty() {
            return Err(invalid("noise.fa_class", "empty class name"));
        }
        check_range("noise.fa_dims.length", self.fa_dims.length, true)?;
        check_range("noise.fa_dims.width", self.fa_dims.width, true)?;
        check_range("noise.fa_dims.height", self.fa_dims.height, true)?;
        Ok(())
    }

    pub fn for_weather(&self, w: WeatherCondition) -> &WeatherNoise {
        &self.per_weather[&w]
    }
}

fn perturb_dim(rng: &mut ChaCha8Rng, v: f64, sigma: f64) -> (f64, f64) {
    let delta = gauss(rng, sigma);
    let out = v + delta;
    if out > 0.0 {
        (out, delta)
    } else {
        (v * 0.1, v * 0.1 - v)
    }
}

fn detect_object(rng: &mut ChaCha8Rng, o: &ObjectLabel, noise: &WeatherNoise) -> Option<ObjectLabel> {
    if !rng.random_bool(noise.p_detect) {
        return None;
    }
    let b = &o.bbox;
    let shape = &noise.conf_shape;
    let dx = gauss(rng, noise.pos_sigma);
    let dy = gauss(rng, noise.pos_sigma);
    let dz = gauss(rng, noise.pos_sigma);
    let (length, dl) = perturb_dim(rng, b.length(), noise.dim_sigma);
    let (width, dw) = perturb_dim(rng, b.width(), noise.dim_sigma);
    let (height, dh) = perturb_dim(rng, b.height(), noise.dim_sigma);
    let dyaw = gauss(rng, noise.yaw_sigma);

    let d = ((dx * dx + dy * dy + dz * dz) / (shape.pos_scale * shape.pos_scale)
        + (dl * dl + dw * dw + dh * dh) / (shape.dim_scale * shape.dim_scale)
        + (dyaw * dyaw) / (shape.yaw_scale * shape.yaw_scale))
        .sqrt();
    let bbox = Box3D::new(
        b.cx() + dx,
        b.cy() + dy,
        b.cz() + dz,
        length,
        width,
        height,
        b.yaw() + dyaw,
    )
    .expect("perturbed box stays valid");
    Some(ObjectLabel {
        class_name: o.class_name.clone(),
        bbox,
        confidence: Some(shape.confidence(d)),
        object_id: None,
    })
}

fn spurious_box(
    rng: &mut ChaCha8Rng,
    noise: &WeatherNoise,
    model: &DetectorNoiseModel,
    fov: &FieldOfView,
    ground_z: f64,
) -> ObjectLabel {
    let height = uniform(rng, model.fa_dims.height);
    let bbox = Box3D::new(
        uniform(rng, fov.x_range),
        uniform(rng, fov.y_range),
        ground_z + height / 2.0,
        uniform(rng, model.fa_dims.length),
        uniform(rng, model.fa_dims.width),
        height,
        rng.random_range(-PI..PI),
    )
    .expect("validated ranges give valid boxes");
    let shape = &noise.conf_shape;
    ObjectLabel {
        class_name: model.fa_class.clone(),
        bbox,
        confidence: Some(uniform(rng, [shape.floor, shape.fa_conf_max])),
        object_id: None,
    }
}

/// Runs the synthetic detector over `truth`. Spurious boxes are spread over
/// `fov` with their base at `ground_z`.
pub fn simulate_detector(
    truth: &Dataset,
    noise: &DetectorNoiseModel,
    fov: &FieldOfView,
    ground_z: f64,
    seed: u64,
) -> Result<Dataset, SimError> {
    noise.validate()?;
    fov.validate("field_of_view")?;
    let sequences: Vec<(String, Vec<Frame>)> = truth
        .sequences()
        .par_iter()
        .map(|(id, frames)| {
            let mut rng = stream_rng(seed, "detector", id);
            let out = frames
                .iter()
                .map(|f| {
                    let wn = noise.for_weather(f.weather);
                    let mut det = f.empty_like();
                    det.objects = f
                        .objects
                        .iter()
                        .filter_map(|o| detect_object(&mut rng, o, wn))
                        .collect();
                    for _ in 0..poisson(&mut rng, wn.fa_rate) {
                        det.objects.push(spurious_box(&mut rng, wn, noise, fov, ground_z));
                    }
                    det
                })
                .collect();
            (id.clone(), out)
        })
        .collect();

    let mut d = Dataset::new(truth.split_name.clone());
    for (id, frames) in sequences {
        d.set_sequence(id, frames);
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedObject {
    pub sequence_id: String,
    pub frame_index: u64,
    pub class_name: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 7],
}

/// Sidecar listing every injected error.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InjectionLog {
    pub misses: Vec<InjectedObject>,
    pub false_alarms: Vec<InjectedObject>,
}

#[derive(Debug, Clone)]
struct MissCandidate {
    sequence_id: String,
    t: usize,
    object: usize,
}

/// Objects at interior frames whose track is matched on both sides, and
/// whose neighbours are themselves anchored further out, so that deleting
/// them leaves a recoverable gap.
fn miss_candidates(d: &Dataset) -> Vec<MissCandidate> {
    let mut out = Vec::new();
    for (id, frames) in d.sequences() {
        let n = frames.len();
        if n < 3 {
            continue;
        }
        for t in 1..n - 1 {
            let (prev, cur, next) = (&frames[t - 1], &frames[t], &frames[t + 1]);
            let with_prev = match_frames(cur, prev, DEFAULT_MATCH_IOU);
            let with_next = match_frames(cur, next, DEFAULT_MATCH_IOU);
            let across = match_frames(prev, next, DEFAULT_MATCH_IOU);
            let prev_anchor = (t >= 2).then(|| match_frames(prev, &frames[t - 2], DEFAULT_MATCH_IOU));
            let next_anchor = (t + 2 < n).then(|| match_frames(next, &frames[t + 2], DEFAULT_MATCH_IOU));
            for i in 0..cur.objects.len() {
                let p = with_prev.pairs.iter().find(|&&(a, _)| a == i).map(|&(_, b)| b);
                let q = with_next.pairs.iter().find(|&&(a, _)| a == i).map(|&(_, b)| b);
                let (Some(p), Some(q)) = (p, q) else { continue };
                if !across.pairs.contains(&(p, q)) {
                    continue;
                }
                let anchored_prev = prev_anchor.as_ref().is_none_or(|m| m.is_matched_a(p));
                let anchored_next = next_anchor.as_ref().is_none_or(|m| m.is_matched_a(q));
                if anchored_prev && anchored_next {
                    out.push(MissCandidate {
                        sequence_id: id.clone(),
                        t,
                        object: i,
                    });
                }
            }
        }
    }
    out
}

const FA_ATTEMPTS: usize = 10_000;
const FA_CLEARANCE: f64 = 1.0;

/// Deletes `n_miss` interior objects and inserts `n_fa` isolated boxes into
/// interior frames, returning the corrupted copy and a log of both.
///
/// Deleted objects are at least three frames apart within a sequence and
/// spurious boxes overlap nothing in their own or neighbouring frames, so a
/// single refinement pass can undo each error.
pub fn inject_intermittent_errors(
    truth: &Dataset,
    n_fa: usize,
    n_miss: usize,
    seed: u64,
) -> Result<(Dataset, InjectionLog), SimError> {
    let mut log = InjectionLog::default();
    if n_fa == 0 && n_miss == 0 {
        return Ok((truth.clone(), log));
    }
    let mut rng = stream_rng(seed, "inject", &truth.split_name);

    // Misses.
    let mut candidates = miss_candidates(truth);
    let available = candidates.len();
    for i in (1..candidates.len()).rev() {
        let j = rng.random_range(0..=i);
        candidates.swap(i, j);
    }
    let mut chosen: Vec<MissCandidate> = Vec::with_capacity(n_miss);
    for c in candidates {
        if chosen.len() == n_miss {
            break;
        }
        let clashes = chosen
            .iter()
            .any(|o| o.sequence_id == c.sequence_id && o.t.abs_diff(c.t) <= 2);
        if !clashes {
            chosen.push(c);
        }
    }
    if chosen.len() < n_miss {
        return Err(SimError::NotEnoughEligible {
            what: "misses",
            requested: n_miss,
            available: chosen.len().min(available),
        });
    }

    let mut sequences: BTreeMap<String, Vec<Frame>> = truth.sequences().clone();
    // At most one deletion per frame, so indices stay valid.
    chosen.sort_by(|a, b| (&a.sequence_id, a.t).cmp(&(&b.sequence_id, b.t)));
    for c in &chosen {
        let frame = &mut sequences.get_mut(&c.sequence_id).expect("candidate sequence")[c.t];
        let removed = frame.objects.remove(c.object);
        log.misses.push(InjectedObject {
            sequence_id: c.sequence_id.clone(),
            frame_index: frame.frame_index,
            class_name: removed.class_name,
            bbox: removed.bbox.to_array(),
        });
    }

    // False alarms.
    if n_fa > 0 {
        let slots: Vec<(String, usize)> = truth
            .sequences()
            .iter()
            .filter(|(_, f)| f.len() >= 3)
            .flat_map(|(id, f)| (1..f.len() - 1).map(move |t| (id.clone(), t)))
            .collect();
        if slots.is_empty() {
            return Err(SimError::NotEnoughEligible {
                what: "false alarms",
                requested: n_fa,
                available: 0,
            });
        }
        let all: Vec<&ObjectLabel> = truth.frames().flat_map(|f| &f.objects).collect();
        let (mut x_range, mut y_range) = ([-20.0f64, 20.0f64], [-20.0f64, 20.0f64]);
        if !all.is_empty() {
            x_range = [f64::INFINITY, f64::NEG_INFINITY];
            y_range = [f64::INFINITY, f64::NEG_INFINITY];
            for o in &all {
                x_range = [x_range[0].min(o.bbox.cx()), x_range[1].max(o.bbox.cx())];
                y_range = [y_range[0].min(o.bbox.cy()), y_range[1].max(o.bbox.cy())];
            }
            x_range = [x_range[0] - 5.0, x_range[1] + 5.0];
            y_range = [y_range[0] - 5.0, y_range[1] + 5.0];
        }
        let class_name = all.first().map_or("Sedan".to_owned(), |o| o.class_name.clone());
        let confidence = all.iter().any(|o| o.confidence.is_some()).then_some(1.0);
        let template = all
            .first()
            .map(|o| o.bbox)
            .unwrap_or_else(|| Box3D::new(0.0, 0.0, -0.9, 4.5, 1.9, 1.6, 0.0).expect("valid"));
        // Boxes placed so far, including deleted truth, per (sequence, t).
        let mut occupied: BTreeMap<(String, usize), Vec<Box3D>> = BTreeMap::new();
        for (id, frames) in truth.sequences() {
            for (t, f) in frames.iter().enumerate() {
                occupied.insert((id.clone(), t), f.objects.iter().map(|o| o.bbox).collect());
            }
        }

        let mut placed = 0;
        let mut attempts = 0;
        while placed < n_fa {
            attempts += 1;
            if attempts > FA_ATTEMPTS {
                return Err(SimError::NotEnoughEligible {
                    what: "false alarms",
                    requested: n_fa,
                    available: placed,
                });
            }
            let (id, t) = &slots[rng.random_range(0..slots.len())];
            let b = template
                .with_center(uniform(&mut rng, x_range), uniform(&mut rng, y_range), template.cz())
                .and_then(|b| {
                    Box3D::new(
                        b.cx(),
                        b.cy(),
                        b.cz(),
                        b.length(),
                        b.width(),
                        b.height(),
                        rng.random_range(-PI..PI),
                    )
                })
                .expect("valid box");
            let radius = b.length().hypot(b.width()) / 2.0;
            let clear = (t - 1..=t + 1).all(|k| {
                occupied[&(id.clone(), k)].iter().all(|o| {
                    let gap = (o.cx() - b.cx()).hypot(o.cy() - b.cy());
                    gap >= radius + o.length().hypot(o.width()) / 2.0 + FA_CLEARANCE && iou_bev(o, &b) == 0.0
                })
            });
            if !clear {
                continue;
            }
            occupied.get_mut(&(id.clone(), *t)).expect("slot").push(b);
            let frame = &mut sequences.get_mut(id).expect("slot sequence")[*t];
            frame.objects.push(ObjectLabel {
                class_name: class_name.clone(),
                bbox: b,
                confidence,
                object_id: None,
            });
            log.false_alarms.push(InjectedObject {
                sequence_id: id.clone(),
                frame_index: frame.frame_index,
                class_name: class_name.clone(),
                bbox: b.to_array(),
            });
            placed += 1;
        }
    }

    let mut out = Dataset::new(truth.split_name.clone());
    for (id, frames) in sequences {
        out.set_sequence(id, frames);
    }
    Ok((out, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::write_dataset;

    fn normal_only() -> BTreeMap<WeatherCondition, f64> {
        [(WeatherCondition::Normal, 1.0)].into()
    }

    fn urban_only() -> BTreeMap<RoadType, f64> {
        [(RoadType::Urban, 1.0)].into()
    }

    fn bytes(d: &Dataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset(d, &mut buf).unwrap();
        buf
    }

    #[test]
    fn constant_velocity_kinematics() {
        let track = ObjectTrack {
            id: "o0".into(),
            class_name: "Sedan".into(),
            start: Box3D::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0).unwrap(),
            velocity: [1.0, 0.0],
        };
        assert_eq!(track.box_at(3).center(), [3.0, 0.0, 0.0]);
    }

    #[test]
    fn truth_is_deterministic_and_tagged() {
        let params = ScenarioParams {
            n_sequences: 4,
            seed: 11,
            ..ScenarioParams::default()
        };
        let a = generate_truth(&params, &normal_only(), &urban_only()).unwrap();
        let b = generate_truth(&params, &normal_only(), &urban_only()).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        assert!(a.frames().all(|f| f.weather == WeatherCondition::Normal));
        assert!(a.num_objects() > 0);
        let other = generate_truth(&ScenarioParams { seed: 12, ..params }, &normal_only(), &urban_only()).unwrap();
        assert_ne!(bytes(&a), bytes(&other));
    }

    #[test]
    fn truth_stays_in_view() {
        let params = ScenarioParams {
            n_sequences: 5,
            frames_per_sequence: 40,
            velocity_range: [1.0, 2.0],
            seed: 3,
            ..ScenarioParams::default()
        };
        let d = generate_truth(&params, &uniform_weather_mix(), &uniform_road_mix()).unwrap();
        for f in d.frames() {
            for o in &f.objects {
                assert!(params.field_of_view.contains_box(&o.bbox));
            }
        }
        // Once an object leaves it never returns.
        for frames in d.sequences().values() {
            let mut gone = std::collections::BTreeSet::new();
            for w in frames.windows(2) {
                for o in &w[0].objects {
                    if !w[1].objects.iter().any(|p| p.object_id == o.object_id) {
                        gone.insert(o.object_id.clone());
                    }
                }
                assert!(w[1].objects.iter().all(|o| !gone.contains(&o.object_id)));
            }
        }
    }

    #[test]
    fn mixes_are_validated() {
        let params = ScenarioParams::default();
        let bad: BTreeMap<WeatherCondition, f64> = [(WeatherCondition::Normal, 0.5)].into();
        assert!(matches!(
            generate_truth(&params, &bad, &urban_only()),
            Err(SimError::InvalidMix {
                name: "weather_mix",
                ..
            })
        ));
        assert!(generate_truth(&params, &BTreeMap::new(), &urban_only()).is_err());
        let bad_params = ScenarioParams {
            n_sequences: 0,
            ..ScenarioParams::default()
        };
        assert!(generate_truth(&bad_params, &normal_only(), &urban_only()).is_err());
    }

    #[test]
    fn perfect_detector_is_identity() {
        let params = ScenarioParams {
            n_sequences: 3,
            seed: 5,
            ..ScenarioParams::default()
        };
        let truth = generate_truth(&params, &uniform_weather_mix(), &urban_only()).unwrap();
        let dets = simulate_detector(
            &truth,
            &DetectorNoiseModel::perfect(),
            &params.field_of_view,
            params.ground_z,
            9,
        )
        .unwrap();
        assert_eq!(dets.num_frames(), truth.num_frames());
        for (d, t) in dets.frames().zip(truth.frames()) {
            assert_eq!(d.objects.len(), t.objects.len());
            for (a, b) in d.objects.iter().zip(&t.objects) {
                assert_eq!(a.bbox, b.bbox);
                assert_eq!(a.confidence, Some(1.0));
            }
        }
    }

    #[test]
    fn zero_detection_probability() {
        let params = ScenarioParams {
            n_sequences: 3,
            ..ScenarioParams::default()
        };
        let truth = generate_truth(&params, &normal_only(), &urban_only()).unwrap();
        let noise = DetectorNoiseModel::uniform(WeatherNoise {
            p_detect: 0.0,
            ..WeatherNoise::perfect()
        });
        let dets = simulate_detector(&truth, &noise, &params.field_of_view, params.ground_z, 1).unwrap();
        assert_eq!(dets.num_objects(), 0);
        assert_eq!(dets.num_frames(), truth.num_frames());
    }

    #[test]
    fn detection_rate_is_binomial() {
        // 1000 static objects spread over 100 one-frame sequences.
        let frames = (0..100).map(|s| {
            let objects = (0..10)
                .map(|k| {
                    ObjectLabel::new(
                        "Sedan",
                        Box3D::new(10.0 * k as f64, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0).unwrap(),
                        None,
                    )
                    .unwrap()
                })
                .collect();
            Frame::new(format!("s{s:03}"), 0, WeatherCondition::Fog, RoadType::Urban).with_objects(objects)
        });
        let truth = Dataset::from_frames("b", frames).unwrap();
        assert_eq!(truth.num_objects(), 1000);
        let noise = DetectorNoiseModel::uniform(WeatherNoise {
            p_detect: 0.9,
            ..WeatherNoise::perfect()
        });
        let dets = simulate_detector(&truth, &noise, &FieldOfView::default(), 0.0, 2024).unwrap();
        let n = dets.num_objects();
        assert!((870..=930).contains(&n), "{n}");
    }

    #[test]
    fn rejects_invalid_noise() {
        let mut noise = DetectorNoiseModel::default();
        noise.per_weather.get_mut(&WeatherCondition::Rain).unwrap().p_detect = 1.2;
        let err = noise.validate().unwrap_err();
        assert!(err.to_string().contains("noise.rain.p_detect"), "{err}");
        let mut noise = DetectorNoiseModel::default();
        noise.per_weather.remove(&WeatherCondition::Sleet);
        assert!(noise.validate().is_err());
    }

    #[test]
    fn injection_counts() {
        let params = ScenarioParams {
            n_sequences: 3,
            seed: 21,
            ..ScenarioParams::default()
        };
        let truth = generate_truth(&params, &normal_only(), &urban_only()).unwrap();
        let (same, log) = inject_intermittent_errors(&truth, 0, 0, 1).unwrap();
        assert_eq!(same, truth);
        assert_eq!(log, InjectionLog::default());

        let (missed, log) = inject_intermittent_errors(&truth, 0, 1, 1).unwrap();
        assert_eq!(missed.num_objects() + 1, truth.num_objects());
        assert_eq!(log.misses.len(), 1);
        let m = &log.misses[0];
        let last = params.frames_per_sequence as u64 - 1;
        assert!(m.frame_index > 0 && m.frame_index < last);

        let (with_fa, log) = inject_intermittent_errors(&truth, 1, 0, 1).unwrap();
        assert_eq!(with_fa.num_objects(), truth.num_objects() + 1);
        let fa = &log.false_alarms[0];
        assert!(fa.frame_index > 0 && fa.frame_index < last);
        let b = Box3D::from_array(fa.bbox).unwrap();
        let frames = with_fa.sequence(&fa.sequence_id).unwrap();
        let t = fa.frame_index as usize;
        for k in [t - 1, t + 1] {
            assert!(frames[k].objects.iter().all(|o| iou_bev(&o.bbox, &b) == 0.0));
        }
    }

    #[test]
    fn injection_needs_eligible_frames() {
        let d = Dataset::from_frames("short", [Frame::new("a", 0, WeatherCondition::Normal, RoadType::Urban)]).unwrap();
        assert!(matches!(
            inject_intermittent_errors(&d, 1, 0, 0),
            Err(SimError::NotEnoughEligible { .. })
        ));
        assert!(matches!(
            inject_intermittent_errors(&d, 0, 1, 0),
            Err(SimError::NotEnoughEligible { .. })
        ));
    }
}
