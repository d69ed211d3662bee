//! In-repo stand-in for the cloud verification service. It speaks the real
//! wire format but returns configured verdicts; actual face identification
//! is the production service's job and no part of this repository.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::payload::{RemoteVerdict, SubmissionPayload, VerdictResponse};
use super::wire::{read_frame, write_frame};
use super::VerifyError;

/// Decision procedure of the stub.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubMode {
    AcceptAll,
    RejectAll,
    /// Accept only payloads whose session token equals the secret.
    MatchToken(String),
}

/// A running stub server; shuts down on drop.
pub struct StubServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    requests: Arc<AtomicU64>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds an ephemeral localhost port and serves until dropped.
    pub fn start(mode: StubMode) -> Result<Self, VerifyError> {
        let listener =
            TcpListener::bind("127.0.0.1:0").map_err(VerifyError::BindFailure)?;
        let addr = listener.local_addr().map_err(VerifyError::BindFailure)?;
        listener
            .set_nonblocking(true)
            .map_err(VerifyError::BindFailure)?;

        let shutdown = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicU64::new(0));
        let handle = {
            let shutdown = Arc::clone(&shutdown);
            let requests = Arc::clone(&requests);
            std::thread::spawn(move || accept_loop(listener, mode, shutdown, requests))
        };
        Ok(StubServer {
            addr,
            shutdown,
            requests,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Requests answered so far (including protocol-error responses).
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    mode: StubMode,
    shutdown: Arc<AtomicBool>,
    requests: Arc<AtomicU64>,
) {
    let mut workers = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let mode = mode.clone();
                let requests = Arc::clone(&requests);
                workers.push(std::thread::spawn(move || {
                    let _ = serve_connection(stream, &mode, &requests);
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(_) => break,
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

fn serve_connection(
    mut stream: TcpStream,
    mode: &StubMode,
    requests: &AtomicU64,
) -> std::io::Result<()> {
    stream.set_nodelay(true).ok();
    stream
        .set_read_timeout(Some(Duration::from_secs(10)))
        .ok();
    loop {
        let body = match read_frame(&mut stream) {
            Ok(Some(body)) => body,
            Ok(None) => return Ok(()),
            Err(e) if e.kind() == ErrorKind::InvalidData => {
                // Unreadable length: the stream cannot be resynchronized.
                return Ok(());
            }
            Err(_) => return Ok(()),
        };
        let verdict = match SubmissionPayload::from_json(
            std::str::from_utf8(&body).unwrap_or(""),
        ) {
            Ok(payload) => decide(mode, &payload),
            Err(e) => RemoteVerdict::Rejected {
                reason: format!("protocol error: {e}"),
            },
        };
        requests.fetch_add(1, Ordering::SeqCst);
        let response = serde_json::to_vec(&VerdictResponse::from(&verdict))
            .expect("verdict serializes");
        write_frame(&mut stream, &response)?;
    }
}

fn decide(mode: &StubMode, payload: &SubmissionPayload) -> RemoteVerdict {
    match mode {
        StubMode::AcceptAll => RemoteVerdict::Accepted,
        StubMode::RejectAll => RemoteVerdict::Rejected {
            reason: "rejected by policy".into(),
        },
        StubMode::MatchToken(secret) => {
            if payload.session_id == *secret {
                RemoteVerdict::Accepted
            } else {
                RemoteVerdict::Rejected {
                    reason: "unknown session token".into(),
                }
            }
        }
    }
}
