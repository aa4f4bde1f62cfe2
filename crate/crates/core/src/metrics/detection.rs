use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{iou, BoundingBox, FrameDetections};

/// Single-category average precision at one IoU threshold with all-point
/// interpolation of the precision/recall curve.
///
/// Detections are swept in descending score order (input order breaks ties).
/// Each one claims the highest-IoU unclaimed ground-truth box in its frame if
/// that IoU reaches `iou_threshold`; otherwise it is a false positive.
pub fn detection_map(dets: &[FrameDetections], gt: &[FrameDetections], iou_threshold: f64) -> Result<f64> {
    let mut truth: BTreeMap<u64, Vec<(BoundingBox, bool)>> = BTreeMap::new();
    for frame in gt {
        truth
            .entry(frame.frame_index)
            .or_default()
            .extend(frame.detections.iter().map(|d| (d.bbox, false)));
    }
    let n_truth: usize = truth.values().map(Vec::len).sum();
    if n_truth == 0 {
        return Err(Error::NoGroundTruth);
    }

    let mut sweep: Vec<(f64, u64, BoundingBox)> = dets
        .iter()
        .flat_map(|f| f.detections.iter().map(move |d| (d.score, f.frame_index, d.bbox)))
        .collect();
    sweep.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(sweep.len());
    for (_, frame, bbox) in &sweep {
        let best = truth.get_mut(frame).and_then(|boxes| {
            let mut best: Option<(usize, f64)> = None;
            for (i, (g, claimed)) in boxes.iter().enumerate() {
                if *claimed {
                    continue;
                }
                let overlap = iou(bbox, g);
                if overlap >= iou_threshold && best.is_none_or(|(_, o)| overlap > o) {
                    best = Some((i, overlap));
                }
            }
            best.map(|(i, _)| &mut boxes[i].1)
        });
        match best {
            Some(claimed) => {
                *claimed = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push((tp as f64 / n_truth as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(all_point_ap(&curve))
}

/// Area under the monotone precision envelope of `(recall, precision)` points
/// ordered by sweep position.
fn all_point_ap(curve: &[(f64, f64)]) -> f64 {
    let mut recall = Vec::with_capacity(curve.len() + 2);
    let mut precision = Vec::with_capacity(curve.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    for &(r, p) in curve {
        recall.push(r);
        precision.push(p);
    }
    recall.push(1.0);
    precision.push(0.0);

    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len())
        .filter(|&i| recall[i] != recall[i - 1])
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Detection;

    fn d(frame: u64, x: f64, score: f64) -> Detection {
        Detection::new(frame, BoundingBox::new(x, 0.0, 10.0, 10.0).unwrap(), score, None).unwrap()
    }

    fn frames(dets: Vec<Detection>) -> Vec<FrameDetections> {
        let mut by_frame: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
        for det in dets {
            by_frame.entry(det.frame_index).or_default().push(det);
        }
        by_frame
            .into_iter()
            .map(|(f, ds)| FrameDetections::new(f, ds).unwrap())
            .collect()
    }

    #[test]
    fn perfect_detector() {
        let gt = frames(vec![d(0, 0., 1.), d(0, 50., 1.), d(1, 20., 1.)]);
        assert_eq!(detection_map(&gt, &gt, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn false_positive_after_full_recall() {
        let gt = frames(vec![d(0, 0., 1.)]);
        let dets = frames(vec![d(0, 0., 0.9), d(0, 100., 0.8)]);
        assert_eq!(detection_map(&dets, &gt, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn recall_capped_at_half() {
        let gt = frames(vec![d(0, 0., 1.), d(0, 100., 1.)]);
        let dets = frames(vec![d(0, 0., 0.9)]);
        assert_eq!(detection_map(&dets, &gt, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn false_positive_first_halves_precision() {
        let gt = frames(vec![d(0, 0., 1.)]);
        let dets = frames(vec![d(0, 100., 0.9), d(0, 0., 0.8)]);
        assert_eq!(detection_map(&dets, &gt, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let gt = frames(vec![d(0, 0., 1.), d(0, 100., 1.)]);
        let dets = frames(vec![d(0, 0., 0.9), d(0, 1., 0.8), d(0, 100., 0.7)]);
        // PR: (0.5, 1), (0.5, 0.5), (1, 2/3) -> 0.5 * 1 + 0.5 * 2/3
        let ap = detection_map(&dets, &gt, 0.5).unwrap();
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn detections_in_other_frames_do_not_match() {
        let gt = frames(vec![d(0, 0., 1.)]);
        let dets = frames(vec![d(1, 0., 0.9)]);
        assert_eq!(detection_map(&dets, &gt, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn no_ground_truth_is_an_error() {
        let dets = frames(vec![d(0, 0., 0.9)]);
        assert!(matches!(detection_map(&dets, &[], 0.5), Err(Error::NoGroundTruth)));
        assert!(detection_map(&dets, &[FrameDetections::empty(0)], 0.5).is_err());
    }

    #[test]
    fn no_detections_scores_zero() {
        let gt = frames(vec![d(0, 0., 1.)]);
        assert_eq!(detection_map(&[], &gt, 0.5).unwrap(), 0.0);
    }
}
