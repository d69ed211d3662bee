//! Greedy per-class non-maximum suppression. Per-class matters here: a
//! face overlapping the breathalyzer must never suppress it.

use super::{iou, Detection};

/// Keeps the greedy-maximal subset by confidence: within each class, no
/// surviving pair overlaps beyond `iou_threshold`. Confidence ties break
/// toward the earlier input index, so the result is deterministic.
pub fn nms(detections: Vec<Detection>, iou_threshold: f32) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut suppressed = vec![false; detections.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        for &j in &order[rank + 1..] {
            if suppressed[j] || detections[j].class_id != detections[i].class_id {
                continue;
            }
            if iou(&detections[i].bbox, &detections[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
        keep.push(i);
    }

    let mut picked: Vec<Option<Detection>> = detections.into_iter().map(Some).collect();
    keep.into_iter()
        .map(|i| picked[i].take().expect("kept index is unique"))
        .collect()
}
