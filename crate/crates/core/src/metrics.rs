//! Evaluation metrics: PCK curves and their AUC, mean 3D joint error, mask
//! IoU / pixel accuracy, frame accuracy, and segmental F1 at an IoU
//! threshold.

use crate::pose3d::Joints3D;
use crate::raster::MaskRaster;
use crate::timeline::{Segment, Status};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no visible keypoint pairs to score")]
    NoVisibleKeypoints,
    #[error("threshold range is degenerate or not covered by the curve")]
    DegenerateRange,
    #[error("length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("dimension mismatch: {a_width}x{a_height} vs {b_width}x{b_height}")]
    DimensionMismatch {
        a_width: u32,
        a_height: u32,
        b_width: u32,
        b_height: u32,
    },
}

/// Fraction of correct keypoints per threshold. Non-decreasing by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PckCurve {
    pub thresholds: Vec<f64>,
    pub pck: Vec<f64>,
}

/// PCK over visible prediction/ground-truth pairs: a pair counts as correct
/// at threshold `t` when its Euclidean error is at most `t`.
pub fn pck_curve(
    pred: &[(f64, f64)],
    gt: &[(f64, f64)],
    visibility: &[bool],
    thresholds: &[f64],
) -> Result<PckCurve, MetricsError> {
    if pred.len() != gt.len() || pred.len() != visibility.len() {
        return Err(MetricsError::LengthMismatch {
            a: pred.len(),
            b: gt.len().max(visibility.len()),
        });
    }
    assert!(
        thresholds.windows(2).all(|w| w[0] <= w[1]),
        "thresholds must be ascending"
    );
    let errors: Vec<f64> = pred
        .iter()
        .zip(gt)
        .zip(visibility)
        .filter(|(_, &vis)| vis)
        .map(|(((pu, pv), (gu, gv)), _)| ((pu - gu).powi(2) + (pv - gv).powi(2)).sqrt())
        .collect();
    if errors.is_empty() {
        return Err(MetricsError::NoVisibleKeypoints);
    }
    let n = errors.len() as f64;
    let pck = thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e <= t).count() as f64 / n)
        .collect();
    Ok(PckCurve {
        thresholds: thresholds.to_vec(),
        pck,
    })
}

/// Normalized trapezoidal area under the piecewise-linear PCK curve over
/// `[t_min, t_max]`. The curve must cover the range.
pub fn auc(curve: &PckCurve, range: (f64, f64)) -> Result<f64, MetricsError> {
    let (t_min, t_max) = range;
    let ts = &curve.thresholds;
    if t_max <= t_min
        || ts.len() < 2
        || ts[0] > t_min
        || *ts.last().unwrap() < t_max
    {
        return Err(MetricsError::DegenerateRange);
    }
    // Piecewise-linear interpolation of pck at an arbitrary t.
    let value_at = |t: f64| -> f64 {
        let idx = ts.partition_point(|&x| x <= t);
        if idx == 0 {
            return curve.pck[0];
        }
        if idx >= ts.len() {
            return *curve.pck.last().unwrap();
        }
        let (t0, t1) = (ts[idx - 1], ts[idx]);
        let (p0, p1) = (curve.pck[idx - 1], curve.pck[idx]);
        if t1 == t0 {
            p1
        } else {
            p0 + (p1 - p0) * (t - t0) / (t1 - t0)
        }
    };
    let mut area = 0.0;
    let mut prev_t = t_min;
    let mut prev_p = value_at(t_min);
    for (&t, &p) in ts.iter().zip(&curve.pck) {
        if t <= t_min || t >= t_max {
            continue;
        }
        area += (t - prev_t) * (prev_p + p) / 2.0;
        prev_t = t;
        prev_p = p;
    }
    let end_p = value_at(t_max);
    area += (t_max - prev_t) * (prev_p + end_p) / 2.0;
    Ok(area / (t_max - t_min))
}

/// Mean Euclidean distance over visible joints, reported in millimeters.
/// Inputs are in meters.
pub fn mean_error_3d(
    pred: &Joints3D,
    gt: &Joints3D,
    visibility: &[bool],
) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() || pred.len() != visibility.len() {
        return Err(MetricsError::LengthMismatch {
            a: pred.len(),
            b: gt.len().max(visibility.len()),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((p, g), &vis) in pred.0.iter().zip(&gt.0).zip(visibility) {
        if vis {
            sum += (p - g).norm();
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::NoVisibleKeypoints);
    }
    Ok(sum / count as f64 * 1000.0)
}

/// Mask intersection-over-union and pixel accuracy.
///
/// IoU of two empty masks is 1 (perfect-agreement convention).
pub fn mask_iou_pa(pred: &MaskRaster, gt: &MaskRaster) -> Result<(f64, f64), MetricsError> {
    if !pred.same_dims(gt) {
        return Err(MetricsError::DimensionMismatch {
            a_width: pred.width,
            a_height: pred.height,
            b_width: gt.width,
            b_height: gt.height,
        });
    }
    let mut intersection = 0usize;
    let mut union = 0usize;
    let mut matches = 0usize;
    for (p, g) in pred.data.iter().zip(&gt.data) {
        let (p, g) = (*p != 0, *g != 0);
        if p && g {
            intersection += 1;
        }
        if p || g {
            union += 1;
        }
        if p == g {
            matches += 1;
        }
    }
    let iou = if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    };
    let total = (pred.width * pred.height).max(1) as usize;
    Ok((iou, matches as f64 / total as f64))
}

/// Fraction of frames whose statuses match.
pub fn frame_accuracy(pred: &[Status], gt: &[Status]) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(MetricsError::LengthMismatch {
            a: pred.len(),
            b: gt.len(),
        });
    }
    let matches = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    Ok(matches as f64 / pred.len() as f64)
}

/// Temporal IoU of two inclusive-index segments.
pub fn segment_iou(a: &Segment, b: &Segment) -> f64 {
    let inter_lo = a.start.max(b.start);
    let inter_hi = a.end.min(b.end);
    if inter_hi < inter_lo {
        return 0.0;
    }
    let intersection = (inter_hi - inter_lo + 1) as f64;
    let union = (a.len() + b.len()) as f64 - intersection;
    intersection / union
}

/// Segmental F1 at an IoU threshold.
///
/// Candidate pairs of equal label are matched greedily in descending IoU
/// order (ties by earlier predicted, then ground-truth, start), one-to-one.
/// Matched pairs with IoU >= threshold are true positives. With no
/// predictions precision is 1; with no ground truth recall is 1.
pub fn f1_at_iou(
    pred: &[Segment],
    gt: &[Segment],
    iou_threshold: f64,
) -> (f64, f64, f64) {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            if p.label != g.label {
                continue;
            }
            let iou = segment_iou(p, g);
            if iou >= iou_threshold {
                candidates.push((iou, pi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| pred[a.1].start.cmp(&pred[b.1].start))
            .then_with(|| gt[a.2].start.cmp(&gt[b.2].start))
    });
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut tp = 0usize;
    for (_, pi, gi) in candidates {
        if !pred_used[pi] && !gt_used[gi] {
            pred_used[pi] = true;
            gt_used[gi] = true;
            tp += 1;
        }
    }
    let precision = if pred.is_empty() {
        1.0
    } else {
        tp as f64 / pred.len() as f64
    };
    let recall = if gt.is_empty() {
        1.0
    } else {
        tp as f64 / gt.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}
