//! YOLOv3 head decoding: logistic box offsets against grid cells,
//! exponential width/height against anchor priors, objectness-times-class
//! confidence, argmax class assignment.

use crate::tensor::Tensor;

use super::{BBox, DetectError, Detection};

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Decodes one raw head tensor. The head carries, per anchor, the channel
/// block `[tx, ty, tw, th, objectness, class scores...]` over its grid.
/// Emits one detection per (cell, anchor) whose best-class confidence
/// reaches `conf_threshold` (inclusive); coordinates are normalized to the
/// letterboxed net frame.
pub fn decode_head(
    head: &Tensor,
    anchors: &[(f32, f32)],
    net_w: usize,
    net_h: usize,
    num_classes: usize,
    conf_threshold: f32,
    names: &[String],
) -> Result<Vec<Detection>, DetectError> {
    let fields = num_classes + 5;
    let expected = anchors.len() * fields;
    if head.c() != expected {
        return Err(DetectError::ChannelCountMismatch {
            expected,
            got: head.c(),
            anchors: anchors.len(),
            classes: num_classes,
        });
    }

    let grid_h = head.h();
    let grid_w = head.w();
    let mut out = Vec::new();

    for (a, &(pw, ph)) in anchors.iter().enumerate() {
        let base = a * fields;
        for cy in 0..grid_h {
            for cx in 0..grid_w {
                let objectness = sigmoid(head.at(base + 4, cy, cx));
                if objectness < conf_threshold {
                    // Class probabilities can only lower the confidence.
                    continue;
                }
                let (mut best_class, mut best_score) = (0usize, f32::NEG_INFINITY);
                for k in 0..num_classes {
                    let score = head.at(base + 5 + k, cy, cx);
                    if score > best_score {
                        best_score = score;
                        best_class = k;
                    }
                }
                let confidence = objectness * sigmoid(best_score);
                if confidence < conf_threshold {
                    continue;
                }
                let bx = (sigmoid(head.at(base, cy, cx)) + cx as f32) / grid_w as f32;
                let by = (sigmoid(head.at(base + 1, cy, cx)) + cy as f32) / grid_h as f32;
                let bw = pw * head.at(base + 2, cy, cx).exp() / net_w as f32;
                let bh = ph * head.at(base + 3, cy, cx).exp() / net_h as f32;
                out.push(Detection {
                    bbox: BBox {
                        cx: bx,
                        cy: by,
                        w: bw,
                        h: bh,
                    },
                    class_id: best_class,
                    confidence,
                    class_name: names
                        .get(best_class)
                        .cloned()
                        .unwrap_or_else(|| best_class.to_string()),
                });
            }
        }
    }
    Ok(out)
}
