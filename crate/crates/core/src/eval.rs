//! Detection-vs-truth matching, precision/recall/F1, and all-point
//! interpolated average precision, overall and per weather condition.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{iou, IouKind};
use crate::labels::{group_by_weather, Dataset, FrameKey, ObjectLabel, WeatherCondition};

/// Class evaluated when none is given.
pub const DEFAULT_CLASS: &str = "Sedan";

/// IoU threshold used for AP when none is given.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("detection {index} of class `{class}` has no confidence")]
    MissingConfidence { index: usize, class: String },
    #[error("{}", misaligned_message(.missing_in_detections, .missing_in_truth))]
    Misaligned {
        missing_in_detections: Vec<FrameKey>,
        missing_in_truth: Vec<FrameKey>,
    },
}

fn misaligned_message(in_dets: &[FrameKey], in_truth: &[FrameKey]) -> String {
    let list = |keys: &[FrameKey]| {
        let shown: Vec<String> = keys.iter().take(10).map(ToString::to_string).collect();
        let more = keys.len().saturating_sub(shown.len());
        if more > 0 {
            format!("{} (+{more} more)", shown.join(", "))
        } else {
            shown.join(", ")
        }
    };
    let mut parts = Vec::new();
    if !in_dets.is_empty() {
        parts.push(format!("frames missing from detections: {}", list(in_dets)));
    }
    if !in_truth.is_empty() {
        parts.push(format!("frames missing from truth: {}", list(in_truth)));
    }
    format!("datasets are not frame-aligned; {}", parts.join("; "))
}

/// Checks that both datasets hold exactly the same `(sequence, frame)` keys.
pub fn check_aligned(dets: &Dataset, truth: &Dataset) -> Result<(), EvalError> {
    let dk = dets.frame_keys();
    let tk = truth.frame_keys();
    if dk == tk {
        return Ok(());
    }
    Err(EvalError::Misaligned {
        missing_in_detections: tk.difference(&dk).cloned().collect(),
        missing_in_truth: dk.difference(&tk).cloned().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedPair {
    pub det_index: usize,
    pub gt_index: usize,
    pub iou: f64,
}

/// TP/FP/FN assignment between one detection list and one truth list.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub matched_pairs: Vec<MatchedPair>,
}

impl MatchResult {
    /// Adds counts from another result; pairs are not carried over.
    pub fn accumulate(&mut self, other: &MatchResult) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Precision/recall/F1 from raw counts. Empty denominators give
    /// precision = 1 and recall = 1; F1 is 0 when `P + R = 0`.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        Self::from_precision_recall(precision, recall)
    }

    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

pub fn precision_recall_f1(m: &MatchResult) -> Prf {
    Prf::from_counts(m.tp, m.fp, m.fn_)
}

/// Indices of `dets` belonging to `class_name`, in descending confidence with
/// ties broken by ascending index.
fn ranked_detections(dets: &[ObjectLabel], class_name: &str) -> Result<Vec<(usize, f64)>, EvalError> {
    let mut ranked = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        if d.class_name != class_name {
            continue;
        }
        let conf = d.confidence.ok_or_else(|| EvalError::MissingConfidence {
            index: i,
            class: d.class_name.clone(),
        })?;
        ranked.push((i, conf));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Greedy confidence-ordered matching restricted to `class_name`.
///
/// Each detection, from most to least confident, claims the unclaimed
/// ground truth with the highest IoU at or above `iou_thresh` (lowest index on
/// ties); otherwise it is a false positive. Unclaimed ground truths are false
/// negatives. Indices in `matched_pairs` refer to the unfiltered inputs.
pub fn match_detections(
    dets: &[ObjectLabel],
    gts: &[ObjectLabel],
    iou_kind: IouKind,
    iou_thresh: f64,
    class_name: &str,
) -> Result<MatchResult, EvalError> {
    let ranked = ranked_detections(dets, class_name)?;
    let gt_idx: Vec<usize> = gts
        .iter()
        .enumerate()
        .filter(|(_, g)| g.class_name == class_name)
        .map(|(i, _)| i)
        .collect();
    let mut claimed = vec![false; gt_idx.len()];
    let mut result = MatchResult::default();

    for (di, _) in ranked {
        let mut best: Option<(usize, f64)> = None;
        for (slot, &gi) in gt_idx.iter().enumerate() {
            if claimed[slot] {
                continue;
            }
            let v = iou(iou_kind, &dets[di].bbox, &gts[gi].bbox);
            if v >= iou_thresh && best.is_none_or(|(_, b)| v > b) {
                best = Some((slot, v));
            }
        }
        match best {
            Some((slot, v)) => {
                claimed[slot] = true;
                result.tp += 1;
                result.matched_pairs.push(MatchedPair {
                    det_index: di,
                    gt_index: gt_idx[slot],
                    iou: v,
                });
            }
            None => result.fp += 1,
        }
    }
    result.fn_ = claimed.iter().filter(|c| !**c).count();
    Ok(result)
}

/// Frame-summed matching counts over two aligned datasets for one class.
pub fn match_datasets(
    dets: &Dataset,
    truth: &Dataset,
    iou_kind: IouKind,
    iou_thresh: f64,
    class_name: &str,
) -> Result<MatchResult, EvalError> {
    check_aligned(dets, truth)?;
    let mut total = MatchResult::default();
    for (d, t) in dets.frames().zip(truth.frames()) {
        let m = match_detections(&d.objects, &t.objects, iou_kind, iou_thresh, class_name)?;
        total.accumulate(&m);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One pooled detection after per-frame matching.
#[derive(Debug, Clone)]
struct ScoredDetection {
    confidence: f64,
    key: FrameKey,
    det_index: usize,
    is_tp: bool,
}

/// Pooled PR curve plus the ground-truth count it was built against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub num_truth: usize,
    pub num_detections: usize,
    pub points: Vec<PrPoint>,
}

/// Builds the pooled precision/recall curve: one point per detection in
/// descending confidence, ties broken by `(sequence, frame, det index)`.
pub fn pr_curve(
    dets: &Dataset,
    truth: &Dataset,
    iou_kind: IouKind,
    iou_thresh: f64,
    class_name: &str,
) -> Result<PrCurve, EvalError> {
    check_aligned(dets, truth)?;
    let mut scored = Vec::new();
    let mut num_truth = 0;
    for (d, t) in dets.frames().zip(truth.frames()) {
        let m = match_detections(&d.objects, &t.objects, iou_kind, iou_thresh, class_name)?;
        num_truth += m.tp + m.fn_;
        let tp_dets: Vec<usize> = m.matched_pairs.iter().map(|p| p.det_index).collect();
        for (i, o) in d.objects.iter().enumerate() {
            if o.class_name != class_name {
                continue;
            }
            scored.push(ScoredDetection {
                // match_detections already rejected missing confidences.
                confidence: o.confidence.unwrap_or_default(),
                key: d.key(),
                det_index: i,
                is_tp: tp_dets.contains(&i),
            });
        }
    }
    scored.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.key.cmp(&b.key))
            .then_with(|| a.det_index.cmp(&b.det_index))
    });

    let mut tp = 0usize;
    let mut points = Vec::with_capacity(scored.len());
    for (rank, s) in scored.iter().enumerate() {
        if s.is_tp {
            tp += 1;
        }
        points.push(PrPoint {
            confidence: s.confidence,
            precision: tp as f64 / (rank + 1) as f64,
            recall: if num_truth == 0 {
                0.0
            } else {
                tp as f64 / num_truth as f64
            },
        });
    }
    Ok(PrCurve {
        num_truth,
        num_detections: scored.len(),
        points,
    })
}

/// Area under the precision envelope `max_{r' >= r} P(r')`, integrated over
/// recall (all-point interpolation).
///
/// With no truth objects the result is 1 when there are also no detections
/// and 0 otherwise.
pub fn ap_from_curve(curve: &PrCurve) -> f64 {
    if curve.num_truth == 0 {
        return if curve.num_detections == 0 { 1.0 } else { 0.0 };
    }
    let pts = &curve.points;
    let mut envelope = vec![0.0; pts.len()];
    let mut running = 0.0f64;
    for i in (0..pts.len()).rev() {
        running = running.max(pts[i].precision);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in pts.iter().zip(&envelope) {
        if p.recall > prev_recall {
            ap += (p.recall - prev_recall) * env;
            prev_recall = p.recall;
        }
    }
    ap.clamp(0.0, 1.0)
}

pub fn average_precision(
    dets: &Dataset,
    truth: &Dataset,
    iou_kind: IouKind,
    iou_thresh: f64,
    class_name: &str,
) -> Result<f64, EvalError> {
    Ok(ap_from_curve(&pr_curve(dets, truth, iou_kind, iou_thresh, class_name)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApPair {
    pub ap_bev: f64,
    pub ap_3d: f64,
}

/// Overall and per-weather AP; `prf_at_tau` is filled in by callers that
/// evaluate at a fixed confidence threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_condition: BTreeMap<WeatherCondition, ApPair>,
    pub overall: ApPair,
    pub prf_at_tau: Option<Prf>,
}

fn ap_pair(dets: &Dataset, truth: &Dataset, iou_thresh: f64, class_name: &str) -> Result<ApPair, EvalError> {
    Ok(ApPair {
        ap_bev: average_precision(dets, truth, IouKind::Bev, iou_thresh, class_name)?,
        ap_3d: average_precision(dets, truth, IouKind::ThreeD, iou_thresh, class_name)?,
    })
}

/// Splits frames by the truth's weather tag and computes AP_BEV / AP_3D per
/// group and on the pooled data.
pub fn evaluate_by_condition(
    dets: &Dataset,
    truth: &Dataset,
    iou_thresh: f64,
    class_name: &str,
) -> Result<EvalReport, EvalError> {
    check_aligned(dets, truth)?;
    let overall = ap_pair(dets, truth, iou_thresh, class_name)?;
    let mut per_condition = BTreeMap::new();
    for (weather, truth_group) in group_by_weather(truth) {
        let keys = truth_group.frame_keys();
        let det_group = dets.retain_frames(|f| keys.contains(&f.key()));
        per_condition.insert(weather, ap_pair(&det_group, &truth_group, iou_thresh, class_name)?);
    }
    Ok(EvalReport {
        per_condition,
        overall,
        prf_at_tau: None,
    })
}
