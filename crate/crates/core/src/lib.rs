//! Core runtime for a detection-gated sample-verification system:
//! Darknet config and weights handling, CPU YOLOv3/tiny inference,
//! detection post-processing, dataset preparation, the co-presence
//! verification state machine, and a latency benchmark harness.

pub mod bench;
pub mod cfg;
pub mod dataset;
pub mod detect;
pub mod tensor;
pub mod verify;
pub mod weights;
