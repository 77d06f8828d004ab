//! Detection metrics: IoU, greedy matching, average precision, and
//! dataset-level reports (mAP@0.5, mAP@0.5-0.95, precision, recall).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};

/// IoU thresholds for the mAP@0.5-0.95 sweep.
pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];
/// Operating point for the headline precision/recall numbers.
pub const HEADLINE_IOU: f64 = 0.5;
pub const HEADLINE_CONFIDENCE: f64 = 0.5;
const RECALL_POINTS: usize = 101;

/// Axis-aligned box in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if x_max < x_min || y_max < y_min {
            return Err(Error::InvalidArgument(format!(
                "degenerate box ({x_min},{y_min})-({x_max},{y_max})"
            )));
        }
        Ok(BBox { x_min, y_min, x_max, y_max })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u32,
    pub confidence: f64,
    pub image_id: String,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class_id: u32,
    pub image_id: String,
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Outcome of greedy one-to-one matching within a single image.
#[derive(Debug, PartialEq)]
pub struct MatchResult {
    /// (detection index, ground-truth index) pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_ground_truths: Vec<usize>,
}

/// Greedy matching: detections in descending confidence (ties by input
/// index) claim the unmatched same-class ground truth with the highest
/// IoU >= threshold (inclusive).
pub fn match_detections(
    detections: &[Detection],
    ground_truths: &[GroundTruth],
    iou_threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut gt_taken = vec![false; ground_truths.len()];
    let mut matches = Vec::new();
    let mut unmatched_detections = Vec::new();
    for di in order {
        let det = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in ground_truths.iter().enumerate() {
            if gt_taken[gi] || gt.class_id != det.class_id {
                continue;
            }
            let overlap = iou(&det.bbox, &gt.bbox);
            if overlap >= iou_threshold && best.map_or(true, |(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        match best {
            Some((gi, _)) => {
                gt_taken[gi] = true;
                matches.push((di, gi));
            }
            None => unmatched_detections.push(di),
        }
    }
    let unmatched_ground_truths = gt_taken
        .iter()
        .enumerate()
        .filter(|(_, &t)| !t)
        .map(|(i, _)| i)
        .collect();
    MatchResult { matches, unmatched_detections, unmatched_ground_truths }
}

/// Dataset-wide TP/FP flags for one class at one IoU threshold, in
/// descending-confidence order.
fn tp_fp_flags(
    detections: &[Detection],
    ground_truths: &[GroundTruth],
    class_id: u32,
    iou_threshold: f64,
) -> (Vec<bool>, usize) {
    let mut order: Vec<usize> = (0..detections.len())
        .filter(|&i| detections[i].class_id == class_id)
        .collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut gts_by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (gi, gt) in ground_truths.iter().enumerate() {
        if gt.class_id == class_id {
            gts_by_image.entry(gt.image_id.as_str()).or_default().push(gi);
        }
    }
    let n_gt: usize = gts_by_image.values().map(Vec::len).sum();
    let mut taken = vec![false; ground_truths.len()];
    let mut flags = Vec::with_capacity(order.len());
    for di in order {
        let det = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        if let Some(candidates) = gts_by_image.get(det.image_id.as_str()) {
            for &gi in candidates {
                if taken[gi] {
                    continue;
                }
                let overlap = iou(&det.bbox, &ground_truths[gi].bbox);
                if overlap >= iou_threshold && best.map_or(true, |(_, b)| overlap > b) {
                    best = Some((gi, overlap));
                }
            }
        }
        if let Some((gi, _)) = best {
            taken[gi] = true;
            flags.push(true);
        } else {
            flags.push(false);
        }
    }
    (flags, n_gt)
}

/// 101-point interpolated average precision for one class. `None` when the
/// class has neither ground truths nor detections.
pub fn average_precision(
    detections: &[Detection],
    ground_truths: &[GroundTruth],
    class_id: u32,
    iou_threshold: f64,
) -> Option<f64> {
    let (flags, n_gt) = tp_fp_flags(detections, ground_truths, class_id, iou_threshold);
    if n_gt == 0 {
        return if flags.is_empty() { None } else { Some(0.0) };
    }
    let mut precisions = Vec::with_capacity(flags.len());
    let mut recalls = Vec::with_capacity(flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for hit in flags {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        precisions.push(tp as f64 / (tp + fp) as f64);
        recalls.push(tp as f64 / n_gt as f64);
    }
    // Monotone non-increasing precision envelope.
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        if precisions[i] < precisions[i + 1] {
            precisions[i] = precisions[i + 1];
        }
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        // First curve point with recall >= r; envelope precision there is
        // the max precision at or beyond this recall.
        let p = recalls
            .iter()
            .position(|&rc| rc >= r - 1e-12)
            .map_or(0.0, |i| precisions[i]);
        sum += p;
    }
    Some(sum / RECALL_POINTS as f64)
}

/// Per-class AP values and aggregate metrics for one dataset split.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    /// class id -> AP at each threshold of [`IOU_THRESHOLDS`] (None where
    /// undefined).
    pub per_class_ap: BTreeMap<u32, Vec<Option<f64>>>,
    pub map50: f64,
    pub map5095: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Detection class ids with no ground truth anywhere in the split.
    pub unknown_classes: Vec<u32>,
}

/// Evaluate a full split: AP per class per IoU threshold, headline
/// precision/recall at IoU 0.5 with confidence cut 0.5.
pub fn evaluate(detections: &[Detection], ground_truths: &[GroundTruth]) -> EvalReport {
    let gt_classes: BTreeSet<u32> = ground_truths.iter().map(|g| g.class_id).collect();
    let det_classes: BTreeSet<u32> = detections.iter().map(|d| d.class_id).collect();
    let classes: BTreeSet<u32> = gt_classes.union(&det_classes).copied().collect();
    let unknown_classes: Vec<u32> = det_classes.difference(&gt_classes).copied().collect();

    let mut per_class_ap = BTreeMap::new();
    for &class in &classes {
        let aps: Vec<Option<f64>> = IOU_THRESHOLDS
            .iter()
            .map(|&t| average_precision(detections, ground_truths, class, t))
            .collect();
        per_class_ap.insert(class, aps);
    }
    let mean_at = |idx: usize| -> f64 {
        let vals: Vec<f64> = per_class_ap.values().filter_map(|aps| aps[idx]).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let map50 = mean_at(0);
    let all: Vec<f64> = per_class_ap
        .values()
        .flat_map(|aps| aps.iter().filter_map(|a| *a))
        .collect();
    let map5095 = if all.is_empty() {
        0.0
    } else {
        all.iter().sum::<f64>() / all.len() as f64
    };

    // Headline counts: confident detections matched at IoU 0.5, per image.
    let confident: Vec<Detection> = detections
        .iter()
        .filter(|d| d.confidence >= HEADLINE_CONFIDENCE)
        .cloned()
        .collect();
    let mut images: BTreeSet<&str> = ground_truths.iter().map(|g| g.image_id.as_str()).collect();
    images.extend(confident.iter().map(|d| d.image_id.as_str()));
    let (mut tp, mut fp) = (0usize, 0usize);
    for image in images {
        let dets: Vec<Detection> = confident
            .iter()
            .filter(|d| d.image_id == image)
            .cloned()
            .collect();
        let gts: Vec<GroundTruth> = ground_truths
            .iter()
            .filter(|g| g.image_id == image)
            .cloned()
            .collect();
        let result = match_detections(&dets, &gts, HEADLINE_IOU);
        tp += result.matches.len();
        fp += result.unmatched_detections.len();
    }
    let false_negatives = ground_truths.len() - tp;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if ground_truths.is_empty() {
        0.0
    } else {
        tp as f64 / ground_truths.len() as f64
    };

    EvalReport {
        per_class_ap,
        map50,
        map5095,
        precision,
        recall,
        true_positives: tp,
        false_positives: fp,
        false_negatives,
        unknown_classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: (f64, f64, f64, f64), class: u32, conf: f64, img: &str) -> Detection {
        Detection {
            bbox: BBox::new(b.0, b.1, b.2, b.3).unwrap(),
            class_id: class,
            confidence: conf,
            image_id: img.to_string(),
        }
    }

    fn gt(b: (f64, f64, f64, f64), class: u32, img: &str) -> GroundTruth {
        GroundTruth {
            bbox: BBox::new(b.0, b.1, b.2, b.3).unwrap(),
            class_id: class,
            image_id: img.to_string(),
        }
    }

    #[test]
    fn iou_identical_is_one() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(iou(&b, &b), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = BBox::new(0.0, 0.0, 5.0, 5.0).unwrap();
        let b = BBox::new(10.0, 10.0, 20.0, 20.0).unwrap();
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_half_overlap() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BBox::new(0.0, 0.0, 10.0, 5.0).unwrap();
        assert_eq!(iou(&a, &b), 0.5);
    }

    #[test]
    fn iou_degenerate_boxes_give_zero() {
        let a = BBox::new(5.0, 5.0, 5.0, 5.0).unwrap();
        assert_eq!(iou(&a, &a), 0.0);
    }

    #[test]
    fn exact_detection_matches() {
        let dets = vec![det((0.0, 0.0, 10.0, 10.0), 0, 0.9, "a")];
        let gts = vec![gt((0.0, 0.0, 10.0, 10.0), 0, "a")];
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!(m.matches, vec![(0, 0)]);
        assert!(m.unmatched_detections.is_empty());
    }

    #[test]
    fn duplicate_detection_higher_confidence_wins() {
        let dets = vec![
            det((0.0, 0.0, 10.0, 10.0), 0, 0.6, "a"),
            det((0.0, 0.0, 10.0, 10.0), 0, 0.9, "a"),
        ];
        let gts = vec![gt((0.0, 0.0, 10.0, 10.0), 0, "a")];
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!(m.matches, vec![(1, 0)]);
        assert_eq!(m.unmatched_detections, vec![0]);
    }

    #[test]
    fn iou_exactly_at_threshold_is_a_match() {
        let dets = vec![det((0.0, 0.0, 10.0, 5.0), 0, 0.9, "a")];
        let gts = vec![gt((0.0, 0.0, 10.0, 10.0), 0, "a")];
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!(m.matches.len(), 1);
    }

    #[test]
    fn class_mismatch_never_matches() {
        let dets = vec![det((0.0, 0.0, 10.0, 10.0), 1, 0.9, "a")];
        let gts = vec![gt((0.0, 0.0, 10.0, 10.0), 0, "a")];
        let m = match_detections(&dets, &gts, 0.5);
        assert!(m.matches.is_empty());
    }

    #[test]
    fn perfect_single_detection_ap_is_one() {
        let dets = vec![det((0.0, 0.0, 10.0, 10.0), 0, 0.9, "a")];
        let gts = vec![gt((0.0, 0.0, 10.0, 10.0), 0, "a")];
        assert_eq!(average_precision(&dets, &gts, 0, 0.5), Some(1.0));
    }

    #[test]
    fn iou_half_pair_sweeps_to_point_one() {
        // IoU exactly 0.5: AP is 1 at threshold 0.50 and 0 above it.
        let dets = vec![det((0.0, 0.0, 10.0, 5.0), 0, 0.9, "a")];
        let gts = vec![gt((0.0, 0.0, 10.0, 10.0), 0, "a")];
        assert_eq!(average_precision(&dets, &gts, 0, 0.50), Some(1.0));
        assert_eq!(average_precision(&dets, &gts, 0, 0.55), Some(0.0));
        let report = evaluate(&dets, &gts);
        assert!((report.map5095 - 0.1).abs() < 1e-12);
        assert!((report.map50 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_gts_no_dets_excluded_but_dets_only_scores_zero() {
        let gts = vec![gt((0.0, 0.0, 10.0, 10.0), 0, "a")];
        assert_eq!(average_precision(&[], &gts, 5, 0.5), None);
        let dets = vec![det((0.0, 0.0, 10.0, 10.0), 5, 0.9, "a")];
        assert_eq!(average_precision(&dets, &gts, 5, 0.5), Some(0.0));
    }

    #[test]
    fn empty_detections_give_zero_recall() {
        let gts = vec![gt((0.0, 0.0, 10.0, 10.0), 0, "a")];
        let report = evaluate(&[], &gts);
        assert_eq!(report.recall, 0.0);
        assert_eq!(report.map50, 0.0);
        assert_eq!(report.false_negatives, 1);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gts = vec![
            gt((0.0, 0.0, 10.0, 10.0), 0, "a"),
            gt((20.0, 20.0, 40.0, 50.0), 1, "b"),
        ];
        let dets = vec![
            det((0.0, 0.0, 10.0, 10.0), 0, 0.9, "a"),
            det((20.0, 20.0, 40.0, 50.0), 1, 0.8, "b"),
        ];
        let report = evaluate(&dets, &gts);
        assert_eq!(report.map50, 1.0);
        assert_eq!(report.map5095, 1.0);
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
    }

    #[test]
    fn unknown_detection_class_is_flagged() {
        let gts = vec![gt((0.0, 0.0, 10.0, 10.0), 0, "a")];
        let dets = vec![det((0.0, 0.0, 10.0, 10.0), 7, 0.9, "a")];
        let report = evaluate(&dets, &gts);
        assert_eq!(report.unknown_classes, vec![7]);
    }

    #[test]
    fn ap_invariant_under_monotone_confidence_transform() {
        let gts = vec![
            gt((0.0, 0.0, 10.0, 10.0), 0, "a"),
            gt((30.0, 0.0, 45.0, 10.0), 0, "a"),
        ];
        let dets = vec![
            det((0.0, 0.0, 10.0, 9.0), 0, 0.8, "a"),
            det((30.0, 0.0, 44.0, 10.0), 0, 0.3, "a"),
            det((100.0, 100.0, 110.0, 110.0), 0, 0.5, "a"),
        ];
        let base = average_precision(&dets, &gts, 0, 0.5).unwrap();
        let transformed: Vec<Detection> = dets
            .iter()
            .map(|d| Detection { confidence: (d.confidence * 0.5).sqrt(), ..d.clone() })
            .collect();
        let after = average_precision(&transformed, &gts, 0, 0.5).unwrap();
        assert!((base - after).abs() < 1e-12);
    }
}
