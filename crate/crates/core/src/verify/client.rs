//! Remote submission client with bounded retry. Transport failures retry
//! with exponential backoff; exhausting the budget rejects the sample
//! (fail-closed), it never accepts by default.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use super::payload::{RemoteVerdict, SubmissionPayload, VerdictResponse};
use super::wire::{read_frame, write_frame};
use super::{SessionState, VerificationSession, VerifyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total connection attempts.
    pub max_attempts: u32,
    /// First backoff delay; doubles per retry.
    pub base_delay: Duration,
    /// Per-attempt connect/read/write timeout.
    pub io_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(200),
            io_timeout: Duration::from_secs(5),
        }
    }
}

/// What a submission run produced: the final verdict and how many
/// transport attempts it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmitOutcome {
    pub verdict: RemoteVerdict,
    pub attempts: u32,
}

enum AttemptError {
    /// Connection/read/write trouble: worth retrying.
    Transport(std::io::Error),
    /// The server answered something unusable: also retried, the peer may
    /// recover.
    Protocol(String),
}

fn attempt(payload_json: &[u8], endpoint: SocketAddr, timeout: Duration) -> Result<RemoteVerdict, AttemptError> {
    let mut stream =
        TcpStream::connect_timeout(&endpoint, timeout).map_err(AttemptError::Transport)?;
    stream.set_nodelay(true).ok();
    stream.set_read_timeout(Some(timeout)).ok();
    stream.set_write_timeout(Some(timeout)).ok();

    write_frame(&mut stream, payload_json).map_err(AttemptError::Transport)?;
    let body = read_frame(&mut stream)
        .map_err(AttemptError::Transport)?
        .ok_or_else(|| {
            AttemptError::Transport(std::io::Error::new(
                ErrorKind::UnexpectedEof,
                "server closed before answering",
            ))
        })?;
    let response: VerdictResponse = serde_json::from_slice(&body)
        .map_err(|e| AttemptError::Protocol(format!("unparseable response: {e}")))?;
    response
        .into_verdict()
        .map_err(|e| AttemptError::Protocol(e.to_string()))
}

/// Sends `payload` to `endpoint`, retrying transport failures up to the
/// policy's budget. Exhaustion maps to `Rejected(unreachable)`.
pub fn submit_remote(
    payload: &SubmissionPayload,
    endpoint: SocketAddr,
    retry: &RetryPolicy,
) -> Result<SubmitOutcome, VerifyError> {
    let body = serde_json::to_vec(payload)?;
    let mut last_error = String::new();
    let max_attempts = retry.max_attempts.max(1);
    for attempt_no in 1..=max_attempts {
        match attempt(&body, endpoint, retry.io_timeout) {
            Ok(verdict) => {
                return Ok(SubmitOutcome {
                    verdict,
                    attempts: attempt_no,
                })
            }
            Err(AttemptError::Transport(e)) => last_error = e.to_string(),
            Err(AttemptError::Protocol(detail)) => last_error = detail,
        }
        if attempt_no < max_attempts {
            let backoff = retry.base_delay.saturating_mul(1 << (attempt_no - 1));
            std::thread::sleep(backoff);
        }
    }
    Ok(SubmitOutcome {
        verdict: RemoteVerdict::Rejected {
            reason: format!("unreachable: {last_error}"),
        },
        attempts: max_attempts,
    })
}

/// Builds the submission from a routed-remote session, sends it, and
/// applies the verdict; returns the terminal state and attempt count.
pub fn submit_session(
    session: &mut VerificationSession,
    endpoint: SocketAddr,
    retry: &RetryPolicy,
) -> Result<(SessionState, u32), VerifyError> {
    let payload = session.build_submission()?;
    let outcome = submit_remote(&payload, endpoint, retry)?;
    let state = session.apply_remote_verdict(outcome.verdict)?;
    Ok((state, outcome.attempts))
}

#[cfg(test)]
mod tests {
    use super::super::{
        begin_session, test_detection, Capability, DevicePolicy, Frame, StubMode, StubServer,
        CLASS_BREATHALYZER, CLASS_FACE,
    };
    use super::*;
    use std::net::TcpListener;
    use std::time::Instant;

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(10),
            io_timeout: Duration::from_millis(500),
        }
    }

    fn remote_session() -> VerificationSession {
        let mut s = begin_session(DevicePolicy {
            capability: Capability::NoLocalBiometric,
            co_presence_frames: 2,
            confidence_floor: 0.5,
            frame_budget: 10,
            submission_frame_count: 2,
        })
        .unwrap();
        for i in 1..=2 {
            s.observe_frame(
                Frame {
                    timestamp_ms: i,
                    image: vec![1, 2, 3],
                },
                vec![
                    test_detection(CLASS_FACE, 0.9),
                    test_detection(CLASS_BREATHALYZER, 0.9),
                ],
            )
            .unwrap();
        }
        s.route_decision().unwrap();
        s
    }

    #[test]
    fn accept_all_server_accepts() {
        let server = StubServer::start(StubMode::AcceptAll).unwrap();
        let mut session = remote_session();
        let (state, attempts) =
            submit_session(&mut session, server.addr(), &fast_retry()).unwrap();
        assert_eq!(state, SessionState::Accepted);
        assert_eq!(attempts, 1);
        assert_eq!(server.request_count(), 1);
    }

    #[test]
    fn reject_all_server_rejects() {
        let server = StubServer::start(StubMode::RejectAll).unwrap();
        let mut session = remote_session();
        let (state, _) = submit_session(&mut session, server.addr(), &fast_retry()).unwrap();
        assert_eq!(state, SessionState::Rejected);
        assert_eq!(session.reject_reason(), Some("rejected by policy"));
    }

    #[test]
    fn match_token_checks_the_session_token() {
        let server = StubServer::start(StubMode::MatchToken("secret-42".into())).unwrap();
        let mut wrong = remote_session();
        let (state, _) = submit_session(&mut wrong, server.addr(), &fast_retry()).unwrap();
        assert_eq!(state, SessionState::Rejected);

        let mut right = super::super::VerificationSession::with_token(
            *remote_session().policy(),
            "secret-42".into(),
        )
        .unwrap();
        right.begin().unwrap();
        for i in 1..=2 {
            right
                .observe_frame(
                    Frame {
                        timestamp_ms: i,
                        image: vec![0],
                    },
                    vec![
                        test_detection(CLASS_FACE, 0.9),
                        test_detection(CLASS_BREATHALYZER, 0.9),
                    ],
                )
                .unwrap();
        }
        right.route_decision().unwrap();
        let (state, _) = submit_session(&mut right, server.addr(), &fast_retry()).unwrap();
        assert_eq!(state, SessionState::Accepted);
    }

    #[test]
    fn downed_server_rejects_after_three_attempts_with_backoff() {
        // Bind then drop, so the port is very likely refused.
        let port = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let endpoint: SocketAddr = format!("127.0.0.1:{port}").parse().unwrap();
        let retry = fast_retry();
        let mut session = remote_session();
        let started = Instant::now();
        let (state, attempts) = submit_session(&mut session, endpoint, &retry).unwrap();
        assert_eq!(state, SessionState::Rejected);
        assert_eq!(attempts, 3);
        assert!(session.reject_reason().unwrap().starts_with("unreachable"));
        // Two backoff sleeps: base + 2*base.
        assert!(started.elapsed() >= Duration::from_millis(30));
    }

    #[test]
    fn connection_dropping_server_is_retried_then_rejected() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let endpoint = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut accepted = 0u32;
            while accepted < 3 {
                if let Ok((stream, _)) = listener.accept() {
                    drop(stream);
                    accepted += 1;
                }
            }
            accepted
        });

        let mut session = remote_session();
        let (state, attempts) = submit_session(&mut session, endpoint, &fast_retry()).unwrap();
        assert_eq!(state, SessionState::Rejected);
        assert_eq!(attempts, 3);
        assert_eq!(handle.join().unwrap(), 3);
    }
}
