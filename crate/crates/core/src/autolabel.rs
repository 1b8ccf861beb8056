//! Turning raw detections into auto-labels: confidence thresholding,
//! F1-driven threshold selection and single-pass temporal refinement against
//! the neighbouring frames.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::eval::{check_aligned, match_detections, EvalError, MatchResult, Prf};
use crate::geometry::{iou_bev, normalize_yaw, Box3D, IouKind};
use crate::labels::{Dataset, Frame, ObjectLabel};

/// Default "same object" IoU for cross-frame matching and threshold sweeps.
pub const DEFAULT_MATCH_IOU: f64 = 0.3;

/// Antipodal-yaw tolerance for [`interpolate_box`], radians.
pub const ANTIPODAL_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutolabelError {
    #[error("frame {sequence}#{frame_index}: object {object_index} has no confidence")]
    MissingConfidence {
        sequence: String,
        frame_index: u64,
        object_index: usize,
    },
    #[error("threshold {0} is not a ratio in [0, 1]")]
    InvalidThreshold(f64),
    #[error("no candidate thresholds given")]
    NoCandidates,
    #[error("match IoU {0} must lie strictly between 0 and 1")]
    InvalidMatchIou(f64),
    #[error("sequence is not sorted by frame index: {previous} is followed by {next}")]
    Unsorted { previous: u64, next: u64 },
    #[error("sequence mixes ids `{0}` and `{1}`")]
    MixedSequence(String, String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Keeps objects with `confidence >= tau`, preserving order.
pub fn threshold_filter(frame: &Frame, tau: f64) -> Result<Frame, AutolabelError> {
    let mut out = frame.empty_like();
    for (i, o) in frame.objects.iter().enumerate() {
        let conf = o.confidence.ok_or_else(|| AutolabelError::MissingConfidence {
            sequence: frame.sequence_id.clone(),
            frame_index: frame.frame_index,
            object_index: i,
        })?;
        if conf >= tau {
            out.objects.push(o.clone());
        }
    }
    Ok(out)
}

/// [`threshold_filter`] over every frame.
pub fn threshold_dataset(d: &Dataset, tau: f64) -> Result<Dataset, AutolabelError> {
    let mut out = Dataset::new(d.split_name.clone());
    for (id, frames) in d.sequences() {
        let filtered = frames
            .iter()
            .map(|f| threshold_filter(f, tau))
            .collect::<Result<Vec<_>, _>>()?;
        out.set_sequence(id.clone(), filtered);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// F1 sweep over candidate thresholds, ascending by `tau`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub rows: Vec<ThresholdRow>,
    pub best_tau: f64,
}

impl ThresholdReport {
    /// Builds the report from rows, picking the highest F1 and the smallest
    /// tau among ties.
    pub fn from_rows(mut rows: Vec<ThresholdRow>) -> Result<Self, AutolabelError> {
        rows.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        let mut best: Option<&ThresholdRow> = None;
        for row in &rows {
            if best.is_none_or(|b| row.f1 > b.f1) {
                best = Some(row);
            }
        }
        let best_tau = best.ok_or(AutolabelError::NoCandidates)?.tau;
        Ok(Self { rows, best_tau })
    }
}

/// Counts over every class present in either dataset, each class matched
/// separately with BEV IoU.
fn dataset_counts(dets: &Dataset, truth: &Dataset, match_iou: f64) -> Result<MatchResult, AutolabelError> {
    let classes: BTreeSet<&str> = dets
        .frames()
        .chain(truth.frames())
        .flat_map(|f| f.objects.iter().map(|o| o.class_name.as_str()))
        .collect();
    let mut total = MatchResult::default();
    for (d, t) in dets.frames().zip(truth.frames()) {
        for class in &classes {
            let m = match_detections(&d.objects, &t.objects, IouKind::Bev, match_iou, class)?;
            total.accumulate(&m);
        }
    }
    Ok(total)
}

/// Sweeps confidence thresholds and reports dataset-level P/R/F1 for each.
pub fn select_threshold(
    detections: &Dataset,
    truth: &Dataset,
    candidates: &[f64],
    match_iou: f64,
) -> Result<ThresholdReport, AutolabelError> {
    if candidates.is_empty() {
        return Err(AutolabelError::NoCandidates);
    }
    if let Some(&bad) = candidates.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(AutolabelError::InvalidThreshold(bad));
    }
    check_aligned(detections, truth)?;

    let mut taus = candidates.to_vec();
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    let rows = taus
        .into_iter()
        .map(|tau| {
            let kept = threshold_dataset(detections, tau)?;
            let m = dataset_counts(&kept, truth, match_iou)?;
            let prf = Prf::from_counts(m.tp, m.fp, m.fn_);
            Ok(ThresholdRow {
                tau,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
            })
        })
        .collect::<Result<Vec<_>, AutolabelError>>()?;
    ThresholdReport::from_rows(rows)
}

/// Greedy cross-frame association.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatching {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

impl FrameMatching {
    pub fn is_matched_a(&self, i: usize) -> bool {
        self.pairs.iter().any(|&(a, _)| a == i)
    }

    pub fn is_matched_b(&self, j: usize) -> bool {
        self.pairs.iter().any(|&(_, b)| b == j)
    }
}

/// Matches same-class objects of two frames greedily in descending BEV IoU.
/// Pairs below `match_iou` are never accepted; IoU ties go to the lower
/// `(a, b)` index pair.
pub fn match_frames(a: &Frame, b: &Frame, match_iou: f64) -> FrameMatching {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, oa) in a.objects.iter().enumerate() {
        for (j, ob) in b.objects.iter().enumerate() {
            if oa.class_name != ob.class_name {
                continue;
            }
            let v = iou_bev(&oa.bbox, &ob.bbox);
            if v >= match_iou {
                candidates.push((v, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut used_a = vec![false; a.objects.len()];
    let mut used_b = vec![false; b.objects.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        pairs.push((i, j));
    }
    FrameMatching {
        pairs,
        unmatched_a: (0..a.objects.len()).filter(|&i| !used_a[i]).collect(),
        unmatched_b: (0..b.objects.len()).filter(|&j| !used_b[j]).collect(),
    }
}

/// Result of averaging two boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolated {
    pub bbox: Box3D,
    /// The two yaws were antipodal, so `prev`'s yaw was kept.
    pub yaw_ambiguous: bool,
}

/// Mean of two boxes: arithmetic for center and size, circular for yaw.
pub fn interpolate_box(prev: &Box3D, next: &Box3D) -> Interpolated {
    let diff = normalize_yaw(next.yaw() - prev.yaw());
    let yaw_ambiguous = (diff.abs() - PI).abs() <= ANTIPODAL_EPS;
    let yaw = if yaw_ambiguous {
        warn!(
            "antipodal yaws {} and {}; keeping the earlier one",
            prev.yaw(),
            next.yaw()
        );
        prev.yaw()
    } else {
        let s = prev.yaw().sin() + next.yaw().sin();
        let c = prev.yaw().cos() + next.yaw().cos();
        s.atan2(c)
    };
    let mean = |a: f64, b: f64| (a + b) / 2.0;
    let bbox = Box3D::new(
        mean(prev.cx(), next.cx()),
        mean(prev.cy(), next.cy()),
        mean(prev.cz(), next.cz()),
        mean(prev.length(), next.length()),
        mean(prev.width(), next.width()),
        mean(prev.height(), next.height()),
        yaw,
    )
    .expect("mean of two valid boxes is valid");
    Interpolated { bbox, yaw_ambiguous }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum NeighborRule {
    /// False alarm iff unmatched in both `t-1` and `t+1`; miss iff a
    /// `t-1`/`t+1` pair has no counterpart at `t`.
    #[default]
    BothNeighbors,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementParams {
    pub match_iou: f64,
    pub neighbor_rule: NeighborRule,
    /// Also refine the first and last frame, using their single neighbour
    /// for false-alarm removal only.
    pub apply_at_boundaries: bool,
}

impl Default for RefinementParams {
    fn default() -> Self {
        Self {
            match_iou: DEFAULT_MATCH_IOU,
            neighbor_rule: NeighborRule::BothNeighbors,
            apply_at_boundaries: false,
        }
    }
}

impl RefinementParams {
    pub fn with_match_iou(match_iou: f64) -> Result<Self, AutolabelError> {
        let p = Self {
            match_iou,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), AutolabelError> {
        if !(self.match_iou > 0.0 && self.match_iou < 1.0) {
            return Err(AutolabelError::InvalidMatchIou(self.match_iou));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RefineStats {
    pub removed_false_alarms: usize,
    pub inserted_misses: usize,
    pub ambiguous_yaws: usize,
}

impl RefineStats {
    fn add(&mut self, other: RefineStats) {
        self.removed_false_alarms += other.removed_false_alarms;
        self.inserted_misses += other.inserted_misses;
        self.ambiguous_yaws += other.ambiguous_yaws;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedSequence {
    pub frames: Vec<Frame>,
    pub stats: RefineStats,
}

fn refine_interior(prev: &Frame, cur: &Frame, next: &Frame, match_iou: f64) -> (Frame, RefineStats) {
    let mut stats = RefineStats::default();
    let with_prev = match_frames(cur, prev, match_iou);
    let with_next = match_frames(cur, next, match_iou);

    let mut out = cur.empty_like();
    for (i, o) in cur.objects.iter().enumerate() {
        if with_prev.is_matched_a(i) || with_next.is_matched_a(i) {
            out.objects.push(o.clone());
        } else {
            stats.removed_false_alarms += 1;
        }
    }

    let across = match_frames(prev, next, match_iou);
    for &(p, n) in &across.pairs {
        if with_prev.is_matched_b(p) || with_next.is_matched_b(n) {
            continue;
        }
        let (po, no) = (&prev.objects[p], &next.objects[n]);
        let interp = interpolate_box(&po.bbox, &no.bbox);
        if interp.yaw_ambiguous {
            stats.ambiguous_yaws += 1;
        }
        let confidence = match (po.confidence, no.confidence) {
            (Some(a), Some(b)) => Some(a.min(b)),
            _ => None,
        };
        out.objects.push(ObjectLabel {
            class_name: po.class_name.clone(),
            bbox: interp.bbox,
            confidence,
            object_id: None,
        });
        stats.inserted_misses += 1;
    }
    (out, stats)
}

fn refine_boundary(cur: &Frame, neighbor: &Frame, match_iou: f64) -> (Frame, RefineStats) {
    let m = match_frames(cur, neighbor, match_iou);
    let mut out = cur.empty_like();
    let mut stats = RefineStats::default();
    for (i, o) in cur.objects.iter().enumerate() {
        if m.is_matched_a(i) {
            out.objects.push(o.clone());
        } else {
            stats.removed_false_alarms += 1;
        }
    }
    (out, stats)
}

/// One refinement pass over a single sequence.
///
/// Every interior frame is compared against the original (unrefined)
/// frames at `t-1` and `t+1`: objects matching neither are dropped, and
/// `t-1`/`t+1` pairs with no counterpart at `t` are filled with their mean
/// box.
pub fn temporal_refine(seq: &[Frame], params: &RefinementParams) -> Result<RefinedSequence, AutolabelError> {
    params.validate()?;
    for w in seq.windows(2) {
        if w[0].sequence_id != w[1].sequence_id {
            return Err(AutolabelError::MixedSequence(
                w[0].sequence_id.clone(),
                w[1].sequence_id.clone(),
            ));
        }
        if w[0].frame_index >= w[1].frame_index {
            return Err(AutolabelError::Unsorted {
                previous: w[0].frame_index,
                next: w[1].frame_index,
            });
        }
    }

    let mut stats = RefineStats::default();
    let n = seq.len();
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let interior = t > 0 && t + 1 < n;
        let (frame, s) = if interior {
            refine_interior(&seq[t - 1], &seq[t], &seq[t + 1], params.match_iou)
        } else if params.apply_at_boundaries && n >= 2 {
            let neighbor = if t == 0 { &seq[1] } else { &seq[t - 1] };
            refine_boundary(&seq[t], neighbor, params.match_iou)
        } else {
            (seq[t].clone(), RefineStats::default())
        };
        stats.add(s);
        frames.push(frame);
    }
    Ok(RefinedSequence { frames, stats })
}

/// Refines every sequence of a dataset; sequences are processed in parallel.
pub fn refine_dataset(d: &Dataset, params: &RefinementParams) -> Result<(Dataset, RefineStats), AutolabelError> {
    params.validate()?;
    let refined: Vec<(String, RefinedSequence)> = d
        .sequences()
        .par_iter()
        .map(|(id, frames)| temporal_refine(frames, params).map(|r| (id.clone(), r)))
        .collect::<Result<_, _>>()?;

    let mut out = Dataset::new(d.split_name.clone());
    let mut stats = RefineStats::default();
    for (id, r) in refined {
        stats.add(r.stats);
        out.set_sequence(id, r.frames);
    }
    Ok((out, stats))
}
