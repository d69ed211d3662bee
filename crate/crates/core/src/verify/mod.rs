//! The co-presence verification pipeline: a state machine over per-frame
//! detections with capability-based routing to a local biometric check or
//! a remote submission, plus the wire protocol, client, and an in-repo
//! stub verification server.
//!
//! Fail-closed throughout: an unavailable oracle or unreachable server
//! rejects the sample, never accepts it.

mod client;
mod payload;
mod server;
mod wire;

pub use client::{submit_remote, submit_session, RetryPolicy, SubmitOutcome};
pub use payload::{PayloadFrame, PolicyEcho, RemoteVerdict, SubmissionPayload, WireDetection};
pub use server::{StubMode, StubServer};
pub use wire::{read_frame, write_frame, MAX_FRAME_LEN};

use std::collections::VecDeque;
use std::fmt;

use rand::RngCore;
use thiserror::Error;

use crate::detect::Detection;

/// Class names the co-presence rule looks for.
pub const CLASS_BREATHALYZER: &str = "breathalyzer";
pub const CLASS_FACE: &str = "face";

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("invalid policy: {0}")]
    PolicyInvalid(String),
    #[error("operation requires state {expected}, session is {actual}")]
    InvalidState {
        expected: &'static str,
        actual: SessionState,
    },
    #[error("frame timestamp {got} is not after {last}")]
    NonMonotonicTimestamp { last: u64, got: u64 },
    #[error("no evidence frames retained")]
    NoEvidence,
    #[error("failed to bind stub server: {0}")]
    BindFailure(std::io::Error),
    #[error("wire protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Whether the device can verify the owner's face on-device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capability {
    HasLocalBiometric,
    NoLocalBiometric,
}

/// Per-device verification parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevicePolicy {
    pub capability: Capability,
    /// Consecutive co-present frames required (N).
    pub co_presence_frames: u32,
    /// Inclusive minimum confidence for a detection to count.
    pub confidence_floor: f32,
    /// Maximum frames observed before the session times out.
    pub frame_budget: u32,
    /// Frames submitted on the remote path (K).
    pub submission_frame_count: u32,
}

impl DevicePolicy {
    pub fn validate(&self) -> Result<(), VerifyError> {
        if self.co_presence_frames == 0 {
            return Err(VerifyError::PolicyInvalid(
                "co_presence_frames must be positive".into(),
            ));
        }
        if self.co_presence_frames > self.frame_budget {
            return Err(VerifyError::PolicyInvalid(format!(
                "co_presence_frames {} exceeds frame_budget {}",
                self.co_presence_frames, self.frame_budget
            )));
        }
        if self.submission_frame_count == 0
            || self.submission_frame_count > self.frame_budget
        {
            return Err(VerifyError::PolicyInvalid(format!(
                "submission_frame_count {} must be in 1..=frame_budget {}",
                self.submission_frame_count, self.frame_budget
            )));
        }
        if !(self.confidence_floor > 0.0 && self.confidence_floor < 1.0) {
            return Err(VerifyError::PolicyInvalid(format!(
                "confidence_floor {} is outside (0, 1)",
                self.confidence_floor
            )));
        }
        Ok(())
    }
}

impl Default for DevicePolicy {
    fn default() -> Self {
        DevicePolicy {
            capability: Capability::NoLocalBiometric,
            co_presence_frames: 3,
            confidence_floor: 0.5,
            frame_budget: 30,
            submission_frame_count: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Idle,
    Capturing,
    CoPresent,
    RoutedLocal,
    RoutedRemote,
    Accepted,
    Rejected,
    TimedOut,
}

impl SessionState {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            SessionState::Accepted | SessionState::Rejected | SessionState::TimedOut
        )
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SessionState::Idle => "idle",
            SessionState::Capturing => "capturing",
            SessionState::CoPresent => "co-present",
            SessionState::RoutedLocal => "routed-local",
            SessionState::RoutedRemote => "routed-remote",
            SessionState::Accepted => "accepted",
            SessionState::Rejected => "rejected",
            SessionState::TimedOut => "timed-out",
        };
        f.write_str(name)
    }
}

/// One captured camera frame: encoded image bytes plus capture time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub timestamp_ms: u64,
    /// Encoded (JPEG) image bytes, kept device-realistic rather than decoded.
    pub image: Vec<u8>,
}

/// A retained co-present frame with the detections that qualified it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceFrame {
    pub frame: Frame,
    pub detections: Vec<Detection>,
}

/// True iff the detections contain both a face and a breathalyzer at or
/// above `floor` (inclusive).
pub fn co_present(detections: &[Detection], floor: f32) -> bool {
    let hit = |class: &str| {
        detections
            .iter()
            .any(|d| d.class_name == class && d.confidence >= floor)
    };
    hit(CLASS_FACE) && hit(CLASS_BREATHALYZER)
}

/// Verdict source for the local-biometric route. On a real device this is
/// the platform biometric API; here it is an injected stub.
pub trait BiometricOracle {
    fn verify_owner(&self) -> Result<bool, OracleUnavailable>;
}

/// The oracle could not produce a verdict at all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleUnavailable(pub String);

/// Configurable stand-in for the platform biometric API.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiometricStub {
    Match,
    NoMatch,
    Unavailable,
}

impl BiometricOracle for BiometricStub {
    fn verify_owner(&self) -> Result<bool, OracleUnavailable> {
        match self {
            BiometricStub::Match => Ok(true),
            BiometricStub::NoMatch => Ok(false),
            BiometricStub::Unavailable => {
                Err(OracleUnavailable("biometric hardware unavailable".into()))
            }
        }
    }
}

/// State-machine record for one sample submission.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationSession {
    id: String,
    policy: DevicePolicy,
    state: SessionState,
    consecutive_hits: u32,
    frames_seen: u32,
    evidence: VecDeque<EvidenceFrame>,
    last_timestamp: Option<u64>,
    reject_reason: Option<String>,
    passed_co_present: bool,
}

fn random_token() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Creates a session and starts capturing. The usual entry point.
pub fn begin_session(policy: DevicePolicy) -> Result<VerificationSession, VerifyError> {
    let mut session = VerificationSession::new(policy)?;
    session.begin()?;
    Ok(session)
}

impl VerificationSession {
    /// A fresh idle session with a random token.
    pub fn new(policy: DevicePolicy) -> Result<Self, VerifyError> {
        Self::with_token(policy, random_token())
    }

    /// A fresh idle session with a caller-chosen token (used with the
    /// match-token stub server).
    pub fn with_token(policy: DevicePolicy, token: String) -> Result<Self, VerifyError> {
        policy.validate()?;
        Ok(VerificationSession {
            id: token,
            policy,
            state: SessionState::Idle,
            consecutive_hits: 0,
            frames_seen: 0,
            evidence: VecDeque::with_capacity(policy.submission_frame_count as usize),
            last_timestamp: None,
            reject_reason: None,
            passed_co_present: false,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn policy(&self) -> &DevicePolicy {
        &self.policy
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn frames_seen(&self) -> u32 {
        self.frames_seen
    }

    pub fn consecutive_hits(&self) -> u32 {
        self.consecutive_hits
    }

    pub fn evidence(&self) -> impl Iterator<Item = &EvidenceFrame> {
        self.evidence.iter()
    }

    pub fn reject_reason(&self) -> Option<&str> {
        self.reject_reason.as_deref()
    }

    /// True once the session has ever reached `CoPresent`.
    pub fn passed_co_present(&self) -> bool {
        self.passed_co_present
    }

    fn expect_state(
        &self,
        expected: SessionState,
        name: &'static str,
    ) -> Result<(), VerifyError> {
        if self.state != expected {
            return Err(VerifyError::InvalidState {
                expected: name,
                actual: self.state,
            });
        }
        Ok(())
    }

    /// Idle -> Capturing.
    pub fn begin(&mut self) -> Result<(), VerifyError> {
        self.expect_state(SessionState::Idle, "idle")?;
        self.state = SessionState::Capturing;
        Ok(())
    }

    /// Feeds one captured frame and its detections. Co-present frames are
    /// retained as evidence (ring of capacity K). N consecutive hits move
    /// the session to `CoPresent`; exhausting the frame budget first times
    /// it out.
    pub fn observe_frame(
        &mut self,
        frame: Frame,
        detections: Vec<Detection>,
    ) -> Result<SessionState, VerifyError> {
        self.expect_state(SessionState::Capturing, "capturing")?;
        if let Some(last) = self.last_timestamp {
            if frame.timestamp_ms <= last {
                return Err(VerifyError::NonMonotonicTimestamp {
                    last,
                    got: frame.timestamp_ms,
                });
            }
        }
        self.last_timestamp = Some(frame.timestamp_ms);
        self.frames_seen += 1;

        if co_present(&detections, self.policy.confidence_floor) {
            self.consecutive_hits += 1;
            if self.evidence.len() == self.policy.submission_frame_count as usize {
                self.evidence.pop_front();
            }
            self.evidence.push_back(EvidenceFrame { frame, detections });
        } else {
            self.consecutive_hits = 0;
        }

        if self.consecutive_hits >= self.policy.co_presence_frames {
            self.state = SessionState::CoPresent;
            self.passed_co_present = true;
        } else if self.frames_seen >= self.policy.frame_budget {
            self.state = SessionState::TimedOut;
            self.reject_reason = Some("co-presence not established within frame budget".into());
        }
        Ok(self.state)
    }

    /// CoPresent -> RoutedLocal | RoutedRemote, decided by capability alone.
    pub fn route_decision(&mut self) -> Result<SessionState, VerifyError> {
        self.expect_state(SessionState::CoPresent, "co-present")?;
        self.state = match self.policy.capability {
            Capability::HasLocalBiometric => SessionState::RoutedLocal,
            Capability::NoLocalBiometric => SessionState::RoutedRemote,
        };
        Ok(self.state)
    }

    /// Runs the injected biometric oracle. Unavailability rejects: this is
    /// an anti-gaming system, so every failure mode closes the gate.
    pub fn local_biometric_check(
        &mut self,
        oracle: &dyn BiometricOracle,
    ) -> Result<SessionState, VerifyError> {
        self.expect_state(SessionState::RoutedLocal, "routed-local")?;
        match oracle.verify_owner() {
            Ok(true) => self.state = SessionState::Accepted,
            Ok(false) => {
                self.state = SessionState::Rejected;
                self.reject_reason = Some("biometric mismatch".into());
            }
            Err(OracleUnavailable(detail)) => {
                self.state = SessionState::Rejected;
                self.reject_reason = Some(format!("oracle_unavailable: {detail}"));
            }
        }
        Ok(self.state)
    }

    /// Packages the retained evidence for the remote verifier: the K most
    /// recent co-present frames (all of them, flagged short, when fewer).
    pub fn build_submission(&self) -> Result<SubmissionPayload, VerifyError> {
        self.expect_state(SessionState::RoutedRemote, "routed-remote")?;
        if self.evidence.is_empty() {
            return Err(VerifyError::NoEvidence);
        }
        Ok(SubmissionPayload::from_session(self))
    }

    /// Applies the remote verdict, reaching a terminal state.
    pub fn apply_remote_verdict(
        &mut self,
        verdict: RemoteVerdict,
    ) -> Result<SessionState, VerifyError> {
        self.expect_state(SessionState::RoutedRemote, "routed-remote")?;
        match verdict {
            RemoteVerdict::Accepted => self.state = SessionState::Accepted,
            RemoteVerdict::Rejected { reason } => {
                self.state = SessionState::Rejected;
                self.reject_reason = Some(reason);
            }
        }
        Ok(self.state)
    }
}

#[cfg(test)]
pub(crate) fn test_detection(class: &str, confidence: f32) -> Detection {
    use crate::detect::BBox;
    Detection {
        bbox: BBox {
            cx: 0.5,
            cy: 0.5,
            w: 0.2,
            h: 0.2,
        },
        class_id: if class == CLASS_BREATHALYZER { 0 } else { 1 },
        confidence,
        class_name: class.to_string(),
    }
}
