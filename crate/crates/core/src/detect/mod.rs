//! Everything between raw head tensors and final boxes: letterbox
//! preprocessing, YOLO decoding, IoU, and per-class non-maximum
//! suppression.

mod decode;
mod letterbox;
mod nms;

pub use decode::decode_head;
pub use letterbox::{letterbox, unletterbox, LetterboxTransform, PixelImage};
pub use nms::nms;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Darknet defaults; the CLI can override both.
pub const DEFAULT_CONF_THRESHOLD: f32 = 0.25;
pub const DEFAULT_IOU_THRESHOLD: f32 = 0.45;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("head has {got} channels, expected {expected} for {anchors} anchors and {classes} classes")]
    ChannelCountMismatch {
        expected: usize,
        got: usize,
        anchors: usize,
        classes: usize,
    },
}

/// Axis-aligned box in normalized image coordinates, center format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl BBox {
    /// `(x1, y1, x2, y2)` corner form.
    pub fn corners(&self) -> (f32, f32, f32, f32) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn from_corners(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        BBox {
            cx: (x1 + x2) / 2.0,
            cy: (y1 + y2) / 2.0,
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    pub fn area(&self) -> f32 {
        self.w * self.h
    }
}

/// One decoded candidate detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    /// objectness times class probability, in `[0, 1]`.
    pub confidence: f32,
    pub class_name: String,
}

/// Intersection over union of two boxes; zero when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f32 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Loads a Darknet `.names` file: one class name per line, index equal to
/// line number.
pub fn load_names(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}
