//! The submission document and verdict response. Field names here are the
//! wire contract (versioned with `v: 1`); JSON field order follows struct
//! order, so serialization is byte-stable.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::detect::Detection;

use super::VerificationSession;

pub const WIRE_VERSION: u32 = 1;

/// One detection as it travels to the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub class: String,
    pub confidence: f32,
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl From<&Detection> for WireDetection {
    fn from(d: &Detection) -> Self {
        WireDetection {
            class: d.class_name.clone(),
            confidence: d.confidence,
            cx: d.bbox.cx,
            cy: d.bbox.cy,
            w: d.bbox.w,
            h: d.bbox.h,
        }
    }
}

/// One evidence frame: capture time, base64 JPEG bytes, and the
/// detections computed on-device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadFrame {
    pub timestamp_ms: u64,
    pub image: String,
    pub detections: Vec<WireDetection>,
}

/// The policy parameters echoed for the server's audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEcho {
    pub k: u32,
    pub n: u32,
    pub floor: f32,
}

/// The remote submission document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionPayload {
    pub v: u32,
    pub session_id: String,
    pub frames: Vec<PayloadFrame>,
    pub policy: PolicyEcho,
    /// Set when fewer than K evidence frames were available.
    pub short_evidence: bool,
}

impl SubmissionPayload {
    pub(super) fn from_session(session: &VerificationSession) -> Self {
        let policy = session.policy();
        let frames: Vec<PayloadFrame> = session
            .evidence()
            .map(|e| PayloadFrame {
                timestamp_ms: e.frame.timestamp_ms,
                image: BASE64.encode(&e.frame.image),
                detections: e.detections.iter().map(WireDetection::from).collect(),
            })
            .collect();
        let short_evidence = frames.len() < policy.submission_frame_count as usize;
        SubmissionPayload {
            v: WIRE_VERSION,
            session_id: session.id().to_string(),
            frames,
            policy: PolicyEcho {
                k: policy.submission_frame_count,
                n: policy.co_presence_frames,
                floor: policy.confidence_floor,
            },
            short_evidence,
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Decoded image bytes of frame `i`.
    pub fn frame_image(&self, i: usize) -> Result<Vec<u8>, base64::DecodeError> {
        BASE64.decode(&self.frames[i].image)
    }
}

/// The server's answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RemoteVerdict {
    Accepted,
    Rejected { reason: String },
}

/// Wire form of [`RemoteVerdict`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictResponse {
    pub v: u32,
    pub verdict: String,
    pub reason: String,
}

impl From<&RemoteVerdict> for VerdictResponse {
    fn from(v: &RemoteVerdict) -> Self {
        match v {
            RemoteVerdict::Accepted => VerdictResponse {
                v: WIRE_VERSION,
                verdict: "accepted".into(),
                reason: String::new(),
            },
            RemoteVerdict::Rejected { reason } => VerdictResponse {
                v: WIRE_VERSION,
                verdict: "rejected".into(),
                reason: reason.clone(),
            },
        }
    }
}

impl VerdictResponse {
    pub fn into_verdict(self) -> Result<RemoteVerdict, super::VerifyError> {
        match self.verdict.as_str() {
            "accepted" => Ok(RemoteVerdict::Accepted),
            "rejected" => Ok(RemoteVerdict::Rejected {
                reason: self.reason,
            }),
            other => Err(super::VerifyError::Protocol(format!(
                "unknown verdict `{other}`"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{
        begin_session, test_detection, Capability, DevicePolicy, Frame, SessionState,
        CLASS_BREATHALYZER, CLASS_FACE,
    };
    use super::*;

    /// Observes exactly `hits` co-present frames (N = hits, so the session
    /// reaches CoPresent on the last one) and routes remote.
    fn remote_session(hits: u64, k: u32) -> VerificationSession {
        let mut s = super::super::VerificationSession::with_token(
            DevicePolicy {
                capability: Capability::NoLocalBiometric,
                co_presence_frames: hits as u32,
                confidence_floor: 0.5,
                frame_budget: 10,
                submission_frame_count: k,
            },
            "fixed-token".into(),
        )
        .unwrap();
        s.begin().unwrap();
        for i in 1..=hits {
            s.observe_frame(
                Frame {
                    timestamp_ms: i * 10,
                    image: vec![i as u8; 8],
                },
                vec![
                    test_detection(CLASS_FACE, 0.9),
                    test_detection(CLASS_BREATHALYZER, 0.8),
                ],
            )
            .unwrap();
        }
        assert_eq!(s.state(), SessionState::CoPresent);
        s.route_decision().unwrap();
        s
    }

    use super::super::VerificationSession;

    #[test]
    fn payload_takes_most_recent_k_frames() {
        let s = remote_session(5, 3);
        let p = s.build_submission().unwrap();
        assert_eq!(p.frames.len(), 3);
        let stamps: Vec<u64> = p.frames.iter().map(|f| f.timestamp_ms).collect();
        assert_eq!(stamps, vec![30, 40, 50]);
        assert!(!p.short_evidence);
        assert_eq!(p.session_id, "fixed-token");
        assert_eq!(p.policy.k, 3);
        assert_eq!(p.policy.n, 5);
    }

    #[test]
    fn short_evidence_is_flagged() {
        let s = remote_session(3, 5);
        let p = s.build_submission().unwrap();
        assert_eq!(p.frames.len(), 3);
        assert!(p.short_evidence);
    }

    #[test]
    fn timestamps_strictly_increase_in_payload() {
        let s = remote_session(5, 5);
        let p = s.build_submission().unwrap();
        for pair in p.frames.windows(2) {
            assert!(pair[0].timestamp_ms < pair[1].timestamp_ms);
        }
    }

    #[test]
    fn payload_round_trips_byte_stably() {
        let s = remote_session(4, 3);
        let p = s.build_submission().unwrap();
        let json = p.to_json().unwrap();
        let back = SubmissionPayload::from_json(&json).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn frame_images_decode_to_original_bytes() {
        let s = remote_session(3, 3);
        let p = s.build_submission().unwrap();
        assert_eq!(p.frame_image(0).unwrap(), vec![1u8; 8]);
    }

    #[test]
    fn begin_session_without_co_presence_cannot_build() {
        let s = begin_session(DevicePolicy::default()).unwrap();
        assert!(s.build_submission().is_err());
    }

    #[test]
    fn verdict_wire_mapping() {
        let acc: VerdictResponse = (&RemoteVerdict::Accepted).into();
        assert_eq!(acc.verdict, "accepted");
        assert_eq!(acc.into_verdict().unwrap(), RemoteVerdict::Accepted);
        let rej: VerdictResponse = (&RemoteVerdict::Rejected {
            reason: "nope".into(),
        })
            .into();
        assert_eq!(
            rej.into_verdict().unwrap(),
            RemoteVerdict::Rejected { reason: "nope".into() }
        );
        let bad = VerdictResponse {
            v: 1,
            verdict: "maybe".into(),
            reason: String::new(),
        };
        assert!(bad.into_verdict().is_err());
    }
}
