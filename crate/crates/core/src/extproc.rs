//! External evaluators: an objective served by a child process that speaks
//! line-delimited JSON over its stdin/stdout.
//!
//! Every line is one object `{"kind", "id", "payload"}`. The session opens
//! with `hello {"protocol": 1}` followed by `space <search space document>`
//! and waits for the child's `hello`. Each `eval` (payload: the assignment)
//! is answered by a `result` (`{"loss": number}`) or an `error` carrying the
//! same id. Several requests may be in flight at once; replies are matched by
//! id. Closing the session sends `shutdown`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, PoisonError};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::domain::{Assignment, SearchSpace};
use crate::error::{Error, Result};
use crate::objectives::Objective;

pub const PROTOCOL_VERSION: u64 = 1;
pub const RESPONSE_TIMEOUT: Duration = Duration::from_secs(30);
pub const SHUTDOWN_GRACE: Duration = Duration::from_secs(5);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Hello,
    Space,
    Eval,
    Result,
    Error,
    Shutdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub kind: MessageKind,
    pub id: u64,
    pub payload: serde_json::Value,
}

impl WireMessage {
    pub fn new(kind: MessageKind, id: u64, payload: serde_json::Value) -> Self {
        Self { kind, id, payload }
    }

    pub fn eval(id: u64, a: &Assignment) -> Self {
        Self::new(
            MessageKind::Eval,
            id,
            serde_json::to_value(a).expect("assignments serialize"),
        )
    }

    /// One protocol line, newline excluded.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Session(format!("malformed line {line:?}: {e}")))
    }
}

#[derive(Debug)]
enum Reply {
    Loss(f64),
    Failed(String),
    Broken(String),
}

struct Shared {
    stdin: Mutex<Option<ChildStdin>>,
    pending: Mutex<HashMap<u64, Sender<Reply>>>,
    broken: Mutex<Option<String>>,
}

impl Shared {
    fn send(&self, msg: &WireMessage) -> Result<()> {
        let mut stdin = self.stdin.lock().unwrap_or_else(PoisonError::into_inner);
        let pipe = stdin
            .as_mut()
            .ok_or_else(|| Error::Session("session is closed".into()))?;
        let mut line = msg.to_line();
        line.push('\n');
        pipe.write_all(line.as_bytes())
            .and_then(|()| pipe.flush())
            .map_err(|e| Error::Session(format!("write to evaluator failed: {e}")))
    }

    fn broken(&self) -> Option<String> {
        self.broken
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .clone()
    }

    /// Marks the session unusable and fails every waiting request.
    fn fail_all(&self, reason: String) {
        self.broken
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .get_or_insert(reason.clone());
        let pending: Vec<_> = self
            .pending
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .drain()
            .collect();
        for (_, tx) in pending {
            let _ = tx.send(Reply::Broken(reason.clone()));
        }
    }

    fn dispatch(&self, msg: WireMessage) -> std::result::Result<(), String> {
        let reply = match msg.kind {
            MessageKind::Hello => Reply::Loss(0.0),
            MessageKind::Result => match msg.payload.get("loss").and_then(|v| v.as_f64()) {
                Some(loss) if loss.is_finite() => Reply::Loss(loss),
                _ => Reply::Broken(format!(
                    "result {} does not carry a finite loss: {}",
                    msg.id, msg.payload
                )),
            },
            MessageKind::Error => Reply::Failed(
                msg.payload
                    .get("message")
                    .and_then(|m| m.as_str())
                    .map_or_else(|| msg.payload.to_string(), str::to_owned),
            ),
            other => return Err(format!("unexpected {other:?} message from evaluator")),
        };
        let tx = self
            .pending
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .remove(&msg.id)
            .ok_or_else(|| format!("reply for unknown request id {}", msg.id))?;
        let _ = tx.send(reply);
        Ok(())
    }
}

/// A running evaluator process. Usable concurrently from many threads.
pub struct EvaluatorSession {
    name: String,
    space: SearchSpace,
    shared: Arc<Shared>,
    child: Mutex<Child>,
    reader: Option<JoinHandle<()>>,
    next_id: AtomicU64,
    timeout: Duration,
    closed: bool,
}

impl std::fmt::Debug for EvaluatorSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EvaluatorSession")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

/// Starts `command` through `sh -c` and performs the handshake.
pub fn spawn_evaluator(command: &str, space: SearchSpace) -> Result<EvaluatorSession> {
    EvaluatorSession::spawn(command, space, RESPONSE_TIMEOUT)
}

impl EvaluatorSession {
    pub fn spawn(command: &str, space: SearchSpace, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Session(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let shared = Arc::new(Shared {
            stdin: Mutex::new(Some(stdin)),
            pending: Mutex::new(HashMap::new()),
            broken: Mutex::new(None),
        });
        let (hello_tx, hello_rx) = mpsc::channel();
        shared
            .pending
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .insert(0, hello_tx);

        let reader_shared = Arc::clone(&shared);
        let reader = thread::spawn(move || {
            let mut lines = BufReader::new(stdout);
            let mut line = String::new();
            loop {
                line.clear();
                match lines.read_line(&mut line) {
                    Ok(0) => return reader_shared.fail_all("evaluator closed its output".into()),
                    Err(e) => return reader_shared.fail_all(format!("read failed: {e}")),
                    Ok(_) if line.trim().is_empty() => continue,
                    Ok(_) => {}
                }
                let outcome = WireMessage::from_line(&line)
                    .map_err(|e| e.to_string())
                    .and_then(|msg| reader_shared.dispatch(msg));
                if let Err(reason) = outcome {
                    return reader_shared.fail_all(reason);
                }
            }
        });

        let mut session = Self {
            name: format!("extproc:{command}"),
            space,
            shared,
            child: Mutex::new(child),
            reader: Some(reader),
            next_id: AtomicU64::new(1),
            timeout,
            closed: false,
        };
        let handshake = session
            .shared
            .send(&WireMessage::new(
                MessageKind::Hello,
                0,
                json!({ "protocol": PROTOCOL_VERSION }),
            ))
            .and_then(|()| {
                session.shared.send(&WireMessage::new(
                    MessageKind::Space,
                    0,
                    session.space.to_value(),
                ))
            })
            .and_then(|()| match hello_rx.recv_timeout(timeout) {
                Ok(Reply::Loss(_)) => Ok(()),
                Ok(Reply::Broken(r)) | Ok(Reply::Failed(r)) => Err(Error::Session(r)),
                Err(_) => Err(Error::Session("no hello from evaluator".into())),
            });
        if let Err(e) = handshake {
            session.kill();
            return Err(e);
        }
        Ok(session)
    }

    fn request(&self, a: &Assignment) -> Result<f64> {
        if let Some(reason) = self.shared.broken() {
            return Err(Error::Session(reason));
        }
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::channel();
        self.shared
            .pending
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .insert(id, tx);
        // The reader may have died between the check above and registration.
        if let Some(reason) = self.shared.broken() {
            self.forget(id);
            return Err(Error::Session(reason));
        }
        if let Err(e) = self.shared.send(&WireMessage::eval(id, a)) {
            self.forget(id);
            return Err(e);
        }
        match rx.recv_timeout(self.timeout) {
            Ok(Reply::Loss(v)) => Ok(v),
            Ok(Reply::Failed(reason)) => Err(Error::Evaluation {
                candidate: Box::new(a.clone()),
                reason,
            }),
            Ok(Reply::Broken(reason)) => Err(Error::Session(reason)),
            Err(RecvTimeoutError::Timeout) => {
                self.forget(id);
                Err(Error::Session(format!(
                    "no reply to request {id} within {:?}",
                    self.timeout
                )))
            }
            Err(RecvTimeoutError::Disconnected) => Err(Error::Session(
                self.shared
                    .broken()
                    .unwrap_or_else(|| "reply channel closed".into()),
            )),
        }
    }

    fn forget(&self, id: u64) {
        self.shared
            .pending
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .remove(&id);
    }

    /// Process id of the child.
    pub fn pid(&self) -> u32 {
        self.child
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .id()
    }

    /// Sends `shutdown`, closes the pipe and waits for the child to exit.
    /// A child still running after the grace period is killed and reported.
    pub fn close(mut self) -> Result<ExitStatus> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<ExitStatus> {
        self.closed = true;
        let _ = self
            .shared
            .send(&WireMessage::new(MessageKind::Shutdown, 0, json!({})));
        self.shared
            .stdin
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .take();
        let deadline = Instant::now() + SHUTDOWN_GRACE;
        let status = loop {
            let polled = self
                .child
                .lock()
                .unwrap_or_else(PoisonError::into_inner)
                .try_wait();
            match polled {
                Ok(Some(status)) => break Ok(status),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                Ok(None) => {
                    self.kill();
                    break Err(Error::Session(format!(
                        "evaluator did not exit within {SHUTDOWN_GRACE:?} of shutdown"
                    )));
                }
                Err(e) => break Err(Error::Io(e)),
            }
        };
        if let Some(reader) = self.reader.take() {
            let _ = reader.join();
        }
        status
    }

    fn kill(&mut self) {
        self.closed = true;
        self.shared
            .stdin
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .take();
        let mut child = self.child.lock().unwrap_or_else(PoisonError::into_inner);
        let _ = child.kill();
        let _ = child.wait();
    }
}

impl Drop for EvaluatorSession {
    fn drop(&mut self) {
        if !self.closed {
            let _ = self.shutdown();
        }
    }
}

impl Objective for EvaluatorSession {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, a: &Assignment) -> Result<f64> {
        self.request(a)
    }
}

/// Outcome of [`check_conformance`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConformanceReport {
    pub evaluations: usize,
    pub exit_status: ExitStatus,
}

/// Drives an evaluator through the protocol: handshake, one sequential and
/// one concurrent round of `eval` over `probes`, then `shutdown`. Sequential
/// and concurrent answers must agree per assignment, and the child must exit
/// within the shutdown grace period.
pub fn check_conformance(
    command: &str,
    space: &SearchSpace,
    probes: &[Assignment],
) -> Result<ConformanceReport> {
    let session = spawn_evaluator(command, space.clone())?;
    let sequential = probes
        .iter()
        .map(|p| session.evaluate(p))
        .collect::<Result<Vec<_>>>()?;
    let concurrent = thread::scope(|scope| {
        let handles: Vec<_> = probes
            .iter()
            .map(|p| scope.spawn(|| session.evaluate(p)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Session("probe thread panicked".into())))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for ((p, a), b) in probes.iter().zip(&sequential).zip(&concurrent) {
        if a != b {
            return Err(Error::Session(format!(
                "replies disagree for {p}: {a} sequentially, {b} concurrently"
            )));
        }
    }
    let exit_status = session.close()?;
    Ok(ConformanceReport {
        evaluations: probes.len() * 2,
        exit_status,
    })
}
