//! Localization metrics: 3D IoU against ground-truth boxes, precision, and
//! recall.

use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

use crate::geometry::Aabb;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("degenerate box: extent {extent:?} has a non-positive axis")]
    DegenerateBox { extent: [f64; 3] },
    #[error("ground-truth set is empty")]
    EmptyGroundTruth,
}

/// Human-labeled reference box for one object.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox {
    pub label: String,
    pub aabb: Aabb,
}

fn check_box(b: &Aabb) -> Result<(), EvalError> {
    let e = b.extent();
    if e.x <= 0.0 || e.y <= 0.0 || e.z <= 0.0 {
        return Err(EvalError::DegenerateBox { extent: [e.x, e.y, e.z] });
    }
    Ok(())
}

/// Intersection volume over union volume of two boxes; 0 when disjoint,
/// 1 when identical.
pub fn iou_3d(a: &Aabb, b: &Aabb) -> Result<f64, EvalError> {
    check_box(a)?;
    check_box(b)?;
    let lo = a.min.sup(&b.min);
    let hi = a.max.inf(&b.max);
    let inter = (hi.x - lo.x).max(0.0) * (hi.y - lo.y).max(0.0) * (hi.z - lo.z).max(0.0);
    let union = a.volume() + b.volume() - inter;
    Ok(inter / union)
}

/// How one query scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryOutcome {
    /// Returned with IoU at or above the threshold.
    TruePositive,
    /// Returned, ground truth exists, IoU below the threshold.
    FalsePositiveLowIou,
    /// Returned but no ground-truth box carries the label.
    FalsePositiveNoGt,
    /// Ground truth exists but the query returned an error or not-found.
    FalseNegative,
    /// Neither returned nor in the ground truth.
    Unscored,
}

/// A query and the box the system predicted for it (`None` when the query
/// errored or reported not-found).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedQuery {
    pub query: String,
    pub bbox: Option<Aabb>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRow {
    pub query: String,
    pub iou: Option<f64>,
    pub outcome: QueryOutcome,
}

/// Per-scene metrics block.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scene: String,
    pub iou_threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub mean_iou: f64,
    pub rows: Vec<QueryRow>,
}

/// Scores query results against ground truth. Matching is per label (each
/// query maps to at most one ground-truth box); a returned prediction is a
/// true positive iff its IoU meets the threshold. Mean IoU runs over
/// returned predictions (0 for returns without ground truth).
pub fn evaluate_queries(
    scene: &str,
    predictions: &[PredictedQuery],
    ground_truth: &[GroundTruthBox],
    iou_threshold: f64,
) -> Result<EvalReport, EvalError> {
    if ground_truth.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_count = 0usize;
    let mut iou_sum = 0.0;
    let mut returned = 0usize;
    let mut rows = Vec::with_capacity(predictions.len());

    for pred in predictions {
        let gt = ground_truth.iter().find(|g| g.label == pred.query);
        let (iou, outcome) = match (&pred.bbox, gt) {
            (Some(bbox), Some(gt)) => {
                let iou = iou_3d(bbox, &gt.aabb)?;
                returned += 1;
                iou_sum += iou;
                if iou >= iou_threshold {
                    tp += 1;
                    (Some(iou), QueryOutcome::TruePositive)
                } else {
                    fp += 1;
                    (Some(iou), QueryOutcome::FalsePositiveLowIou)
                }
            }
            (Some(_), None) => {
                returned += 1;
                fp += 1;
                (Some(0.0), QueryOutcome::FalsePositiveNoGt)
            }
            (None, Some(_)) => {
                fn_count += 1;
                (None, QueryOutcome::FalseNegative)
            }
            (None, None) => (None, QueryOutcome::Unscored),
        };
        rows.push(QueryRow { query: pred.query.clone(), iou, outcome });
    }

    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_count > 0 { tp as f64 / (tp + fn_count) as f64 } else { 0.0 };
    let mean_iou = if returned > 0 { iou_sum / returned as f64 } else { 0.0 };

    Ok(EvalReport {
        scene: String::from(scene),
        iou_threshold,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_count,
        precision,
        recall,
        mean_iou,
        rows,
    })
}
