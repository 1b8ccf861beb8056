//! Auto-labeling toolkit for 3D box datasets.
//!
//! * [`geometry`]: oriented boxes and exact rotated BEV / 3D IoU.
//! * [`labels`]: condition-tagged frames, weather subsets, JSON-lines I/O.
//! * [`autolabel`]: confidence thresholding, threshold sweeps, temporal
//!   refinement.
//! * [`eval`]: greedy matching, precision/recall/F1 and AP.
//! * [`simdet`]: synthetic scenarios and a weather-conditioned detector.
//! * [`report`]: CSV and SVG exports.

pub mod autolabel;
pub mod eval;
pub mod geometry;
pub mod labels;
pub mod report;
pub mod simdet;

pub use autolabel::{
    interpolate_box, match_frames, refine_dataset, select_threshold, temporal_refine, threshold_filter,
    RefinementParams, ThresholdReport,
};
pub use eval::{
    average_precision, evaluate_by_condition, match_detections, precision_recall_f1, EvalReport, MatchResult, Prf,
};
pub use geometry::{iou_3d, iou_bev, Box3D, IouKind, Polygon2D};
pub use labels::{
    filter_by_subset, group_by_weather, load_dataset, save_dataset, Dataset, Frame, ObjectLabel, RoadType, SubsetSpec,
    WeatherCondition,
};
