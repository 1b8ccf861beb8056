//! Python bindings: `import autolabel_kit`.
//!
//! Validation failures raise `ValueError`, file problems `OSError`.

use std::collections::BTreeMap;
use std::fmt::Display;

use autolabel_core::autolabel::{self, RefinementParams, DEFAULT_MATCH_IOU};
use autolabel_core::eval::{self, Prf, DEFAULT_CLASS, DEFAULT_IOU_THRESHOLD};
use autolabel_core::geometry::{self, Box3D, IouKind};
use autolabel_core::labels::{self, Dataset, Frame, LabelError, ObjectLabel, RoadType, SubsetSpec, WeatherCondition};
use autolabel_core::simdet::{self, DetectorNoiseModel, ScenarioParams};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn label_err(e: LabelError) -> PyErr {
    match e {
        LabelError::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => value_err(e),
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: Display,
{
    s.parse().map_err(value_err)
}

fn iou_kind(kind: &str) -> PyResult<IouKind> {
    match kind {
        "bev" => Ok(IouKind::Bev),
        "3d" => Ok(IouKind::ThreeD),
        other => Err(PyValueError::new_err(format!(
            "unknown IoU kind `{other}` (expected `bev` or `3d`)"
        ))),
    }
}

/// Oriented 3D box; yaw is normalized into [-pi, pi).
#[pyclass(name = "Box3D", module = "autolabel_kit", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyBox3D(Box3D);

#[pymethods]
impl PyBox3D {
    #[new]
    fn new(cx: f64, cy: f64, cz: f64, length: f64, width: f64, height: f64, yaw: f64) -> PyResult<Self> {
        Box3D::new(cx, cy, cz, length, width, height, yaw)
            .map(Self)
            .map_err(value_err)
    }

    #[staticmethod]
    fn from_list(values: [f64; 7]) -> PyResult<Self> {
        Box3D::from_array(values).map(Self).map_err(value_err)
    }

    fn to_list(&self) -> [f64; 7] {
        self.0.to_array()
    }

    #[getter]
    fn cx(&self) -> f64 {
        self.0.cx()
    }
    #[getter]
    fn cy(&self) -> f64 {
        self.0.cy()
    }
    #[getter]
    fn cz(&self) -> f64 {
        self.0.cz()
    }
    #[getter]
    fn length(&self) -> f64 {
        self.0.length()
    }
    #[getter]
    fn width(&self) -> f64 {
        self.0.width()
    }
    #[getter]
    fn height(&self) -> f64 {
        self.0.height()
    }
    #[getter]
    fn yaw(&self) -> f64 {
        self.0.yaw()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        let [cx, cy, cz, l, w, h, yaw] = self.0.to_array();
        format!("Box3D(cx={cx}, cy={cy}, cz={cz}, length={l}, width={w}, height={h}, yaw={yaw})")
    }
}

#[pyclass(name = "ObjectLabel", module = "autolabel_kit", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyObjectLabel(ObjectLabel);

#[pymethods]
impl PyObjectLabel {
    #[new]
    #[pyo3(signature = (class_name, r#box, confidence=None, object_id=None))]
    fn new(class_name: String, r#box: PyBox3D, confidence: Option<f64>, object_id: Option<String>) -> PyResult<Self> {
        let mut o = ObjectLabel::new(class_name, r#box.0, confidence).map_err(value_err)?;
        o.object_id = object_id;
        Ok(Self(o))
    }

    #[getter]
    fn class_name(&self) -> &str {
        &self.0.class_name
    }
    #[getter]
    fn r#box(&self) -> PyBox3D {
        PyBox3D(self.0.bbox)
    }
    #[getter]
    fn confidence(&self) -> Option<f64> {
        self.0.confidence
    }
    #[getter]
    fn object_id(&self) -> Option<&str> {
        self.0.object_id.as_deref()
    }

    fn __repr__(&self) -> String {
        format!(
            "ObjectLabel({:?}, confidence={:?}, id={:?})",
            self.0.class_name, self.0.confidence, self.0.object_id
        )
    }
}

/// One frame; weather and road are the snake_case tag names.
#[pyclass(name = "Frame", module = "autolabel_kit", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyFrame(Frame);

#[pymethods]
impl PyFrame {
    #[new]
    #[pyo3(signature = (sequence_id, frame_index, weather="normal", road="urban", objects=Vec::new()))]
    fn new(
        sequence_id: String,
        frame_index: u64,
        weather: &str,
        road: &str,
        objects: Vec<PyObjectLabel>,
    ) -> PyResult<Self> {
        let f = Frame::new(
            sequence_id,
            frame_index,
            parse::<WeatherCondition>(weather)?,
            parse::<RoadType>(road)?,
        );
        Ok(Self(f.with_objects(objects.into_iter().map(|o| o.0).collect())))
    }

    #[getter]
    fn sequence_id(&self) -> &str {
        &self.0.sequence_id
    }
    #[getter]
    fn frame_index(&self) -> u64 {
        self.0.frame_index
    }
    #[getter]
    fn weather(&self) -> &'static str {
        self.0.weather.as_str()
    }
    #[getter]
    fn road(&self) -> &'static str {
        self.0.road.as_str()
    }
    #[getter]
    fn objects(&self) -> Vec<PyObjectLabel> {
        self.0.objects.iter().cloned().map(PyObjectLabel).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Frame({}, weather={}, objects={})",
            self.0.key(),
            self.0.weather,
            self.0.objects.len()
        )
    }
}

/// Frames grouped by sequence, each sequence sorted by frame index.
#[pyclass(name = "Dataset", module = "autolabel_kit", from_py_object)]
#[derive(Clone)]
pub struct PyDataset(Dataset);

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (split_name="", frames=Vec::new()))]
    fn new(split_name: &str, frames: Vec<PyFrame>) -> PyResult<Self> {
        Dataset::from_frames(split_name, frames.into_iter().map(|f| f.0))
            .map(Self)
            .map_err(label_err)
    }

    #[staticmethod]
    fn load(py: Python<'_>, path: std::path::PathBuf) -> PyResult<Self> {
        py.detach(|| labels::load_dataset(&path)).map(Self).map_err(label_err)
    }

    fn save(&self, py: Python<'_>, path: std::path::PathBuf) -> PyResult<()> {
        py.detach(|| labels::save_dataset(&self.0, &path)).map_err(label_err)
    }

    #[getter]
    fn split_name(&self) -> &str {
        &self.0.split_name
    }
    #[getter]
    fn num_frames(&self) -> usize {
        self.0.num_frames()
    }
    #[getter]
    fn num_objects(&self) -> usize {
        self.0.num_objects()
    }

    fn frames(&self) -> Vec<PyFrame> {
        self.0.frames().cloned().map(PyFrame).collect()
    }

    fn sequence_ids(&self) -> Vec<String> {
        self.0.sequences().keys().cloned().collect()
    }

    /// Keeps frames whose weather is in `NO`, `NOFRL` or `ALL`.
    fn filter_subset(&self, subset: &str) -> PyResult<Self> {
        Ok(Self(labels::filter_by_subset(&self.0, parse::<SubsetSpec>(subset)?)))
    }

    fn __len__(&self) -> usize {
        self.0.num_frames()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({:?}, sequences={}, frames={}, objects={})",
            self.0.split_name,
            self.0.sequences().len(),
            self.0.num_frames(),
            self.0.num_objects()
        )
    }
}

#[pyfunction]
fn iou_bev(a: PyRef<'_, PyBox3D>, b: PyRef<'_, PyBox3D>) -> f64 {
    geometry::iou_bev(&a.0, &b.0)
}

#[pyfunction]
fn iou_3d(a: PyRef<'_, PyBox3D>, b: PyRef<'_, PyBox3D>) -> f64 {
    geometry::iou_3d(&a.0, &b.0)
}

/// Midpoint box between two frames; returns `(box, yaw_ambiguous)`.
#[pyfunction]
fn interpolate_box(prev: PyRef<'_, PyBox3D>, next: PyRef<'_, PyBox3D>) -> (PyBox3D, bool) {
    let out = autolabel::interpolate_box(&prev.0, &next.0);
    (PyBox3D(out.bbox), out.yaw_ambiguous)
}

/// `(precision, recall, f1)` from match counts.
#[pyfunction]
#[pyo3(name = "precision_recall_f1")]
fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = Prf::from_counts(tp, fp, fn_);
    (p.precision, p.recall, p.f1)
}

#[pyfunction]
fn f1_score(precision: f64, recall: f64) -> f64 {
    Prf::from_precision_recall(precision, recall).f1
}

#[pyfunction]
fn threshold(dets: PyRef<'_, PyDataset>, tau: f64) -> PyResult<PyDataset> {
    autolabel::threshold_dataset(&dets.0, tau)
        .map(PyDataset)
        .map_err(value_err)
}

/// Returns `{"rows": [(tau, precision, recall, f1), ...], "best_tau": tau}`.
#[pyfunction]
#[pyo3(signature = (dets, truth, taus=vec![0.1, 0.3, 0.5], match_iou=DEFAULT_MATCH_IOU))]
fn select_threshold<'py>(
    py: Python<'py>,
    dets: PyRef<'py, PyDataset>,
    truth: PyRef<'py, PyDataset>,
    taus: Vec<f64>,
    match_iou: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let (d, t) = (&dets.0, &truth.0);
    let report = py
        .detach(|| autolabel::select_threshold(d, t, &taus, match_iou))
        .map_err(value_err)?;
    let rows: Vec<(f64, f64, f64, f64)> = report
        .rows
        .iter()
        .map(|r| (r.tau, r.precision, r.recall, r.f1))
        .collect();
    let out = PyDict::new(py);
    out.set_item("rows", rows)?;
    out.set_item("best_tau", report.best_tau)?;
    Ok(out)
}

/// Temporal refinement; returns `(refined, stats)`.
#[pyfunction]
#[pyo3(signature = (dataset, match_iou=DEFAULT_MATCH_IOU))]
fn refine<'py>(
    py: Python<'py>,
    dataset: PyRef<'py, PyDataset>,
    match_iou: f64,
) -> PyResult<(PyDataset, Bound<'py, PyDict>)> {
    let params = RefinementParams::with_match_iou(match_iou).map_err(value_err)?;
    let d = &dataset.0;
    let (refined, stats) = py.detach(|| autolabel::refine_dataset(d, &params)).map_err(value_err)?;
    let s = PyDict::new(py);
    s.set_item("removed_false_alarms", stats.removed_false_alarms)?;
    s.set_item("inserted_misses", stats.inserted_misses)?;
    s.set_item("ambiguous_yaws", stats.ambiguous_yaws)?;
    Ok((PyDataset(refined), s))
}

#[pyfunction]
#[pyo3(signature = (dets, truth, kind="bev", iou=DEFAULT_IOU_THRESHOLD, class_name=DEFAULT_CLASS))]
fn average_precision(
    py: Python<'_>,
    dets: PyRef<'_, PyDataset>,
    truth: PyRef<'_, PyDataset>,
    kind: &str,
    iou: f64,
    class_name: &str,
) -> PyResult<f64> {
    let kind = iou_kind(kind)?;
    let (d, t) = (&dets.0, &truth.0);
    py.detach(|| eval::average_precision(d, t, kind, iou, class_name))
        .map_err(value_err)
}

/// AP ratios overall and per weather of the truth:
/// `{"overall": (ap_bev, ap_3d), "per_condition": {weather: (ap_bev, ap_3d)}}`.
#[pyfunction]
#[pyo3(signature = (dets, truth, iou=DEFAULT_IOU_THRESHOLD, class_name=DEFAULT_CLASS, subset="ALL"))]
fn evaluate<'py>(
    py: Python<'py>,
    dets: PyRef<'py, PyDataset>,
    truth: PyRef<'py, PyDataset>,
    iou: f64,
    class_name: &str,
    subset: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let subset = parse::<SubsetSpec>(subset)?;
    let (d, t) = (&dets.0, &truth.0);
    let report = py
        .detach(|| {
            eval::check_aligned(d, t)?;
            let t = labels::filter_by_subset(t, subset);
            let keys = t.frame_keys();
            let d = d.retain_frames(|f| keys.contains(&f.key()));
            eval::evaluate_by_condition(&d, &t, iou, class_name)
        })
        .map_err(value_err)?;
    let per: BTreeMap<&str, (f64, f64)> = report
        .per_condition
        .iter()
        .map(|(w, ap)| (w.as_str(), (ap.ap_bev, ap.ap_3d)))
        .collect();
    let out = PyDict::new(py);
    out.set_item("overall", (report.overall.ap_bev, report.overall.ap_3d))?;
    out.set_item("per_condition", per)?;
    Ok(out)
}

/// Synthetic truth and detector output. `weather` pins every sequence to
/// one tag (uniform mix otherwise); `noise` is `"default"` or `"perfect"`.
#[pyfunction]
#[pyo3(signature = (seed=0, n_sequences=20, frames_per_sequence=10, weather=None, noise="default"))]
fn simulate(
    py: Python<'_>,
    seed: u64,
    n_sequences: usize,
    frames_per_sequence: usize,
    weather: Option<&str>,
    noise: &str,
) -> PyResult<(PyDataset, PyDataset)> {
    let params = ScenarioParams {
        n_sequences,
        frames_per_sequence,
        seed,
        ..ScenarioParams::default()
    };
    let weather_mix = match weather {
        Some(w) => BTreeMap::from([(parse::<WeatherCondition>(w)?, 1.0)]),
        None => simdet::uniform_weather_mix(),
    };
    let model = match noise {
        "default" => DetectorNoiseModel::default(),
        "perfect" => DetectorNoiseModel::perfect(),
        other => return Err(PyValueError::new_err(format!("unknown noise preset `{other}`"))),
    };
    py.detach(|| {
        let truth = simdet::generate_truth(&params, &weather_mix, &simdet::uniform_road_mix())?;
        let dets = simdet::simulate_detector(&truth, &model, &params.field_of_view, params.ground_z, seed)?;
        Ok((PyDataset(truth), PyDataset(dets)))
    })
    .map_err(|e: simdet::SimError| value_err(e))
}

/// Deletes `n_miss` objects and adds `n_fa` isolated boxes; returns
/// `(corrupted, {"misses": [...], "false_alarms": [...]})` with each entry a
/// `(sequence_id, frame_index, Box3D)` tuple.
#[pyfunction]
#[pyo3(signature = (dataset, n_fa, n_miss, seed=0))]
fn inject_errors<'py>(
    py: Python<'py>,
    dataset: PyRef<'py, PyDataset>,
    n_fa: usize,
    n_miss: usize,
    seed: u64,
) -> PyResult<(PyDataset, Bound<'py, PyDict>)> {
    let d = &dataset.0;
    let (corrupted, log) = py
        .detach(|| simdet::inject_intermittent_errors(d, n_fa, n_miss, seed))
        .map_err(value_err)?;
    let entries = |items: &[simdet::InjectedObject]| -> PyResult<Vec<(String, u64, PyBox3D)>> {
        items
            .iter()
            .map(|o| {
                let b = Box3D::from_array(o.bbox).map_err(value_err)?;
                Ok((o.sequence_id.clone(), o.frame_index, PyBox3D(b)))
            })
            .collect()
    };
    let out = PyDict::new(py);
    out.set_item("misses", entries(&log.misses)?)?;
    out.set_item("false_alarms", entries(&log.false_alarms)?)?;
    Ok((PyDataset(corrupted), out))
}

#[pymodule]
fn autolabel_kit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBox3D>()?;
    m.add_class::<PyObjectLabel>()?;
    m.add_class::<PyFrame>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(iou_bev, m)?)?;
    m.add_function(wrap_pyfunction!(iou_3d, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate_box, m)?)?;
    m.add_function(wrap_pyfunction!(prf_from_counts, m)?)?;
    m.add_function(wrap_pyfunction!(f1_score, m)?)?;
    m.add_function(wrap_pyfunction!(threshold, m)?)?;
    m.add_function(wrap_pyfunction!(select_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(inject_errors, m)?)?;
    m.add("WEATHER_CONDITIONS", WeatherCondition::ALL.map(|w| w.as_str()).to_vec())?;
    m.add("SUBSETS", ["NO", "NOFRL", "ALL"])?;
    Ok(())
}
