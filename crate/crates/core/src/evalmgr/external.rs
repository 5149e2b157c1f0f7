//! External evaluator over newline-delimited JSON on a child's stdio.
//!
//! ```text
//! engine -> {"type":"hello","objectives":["top1","latency_ms"],"space":"mobilenetv3-like"}
//! child  -> {"type":"ready"}
//! engine -> {"type":"eval","id":0,"genes":[...]}
//! child  -> {"type":"result","id":0,"objectives":{"top1":76.2,"latency_ms":11.9}}
//!        |  {"type":"error","id":0,"message":"..."}
//! engine -> {"type":"bye"}
//! ```
//!
//! Requests in a batch are pipelined; responses may arrive in any order and
//! are matched by id.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::{select_objectives, EvalError, Evaluator};
use crate::objectives::{ObjectiveSpec, ObjectiveVector};
use crate::space::Genotype;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

/// Message types of the wire protocol.
pub mod protocol {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
    #[serde(tag = "type", rename_all = "snake_case")]
    pub enum Request {
        Hello { objectives: Vec<String>, space: String },
        Eval { id: u64, genes: Vec<i64> },
        Bye,
    }

    #[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
    #[serde(tag = "type", rename_all = "snake_case")]
    pub enum Response {
        Ready,
        Result { id: u64, objectives: serde_json::Map<String, serde_json::Value> },
        Error { id: u64, message: String },
    }

    impl Request {
        /// One line, without the trailing newline.
        pub fn to_line(&self) -> String {
            serde_json::to_string(self).expect("request serializes")
        }
    }

    impl Response {
        pub fn parse(line: &str) -> Result<Self, String> {
            serde_json::from_str(line).map_err(|e| e.to_string())
        }

        pub fn to_line(&self) -> String {
            serde_json::to_string(self).expect("response serializes")
        }
    }
}

use protocol::{Request, Response};

pub struct ExternalEvaluator {
    id: String,
    specs: Vec<ObjectiveSpec>,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    timeout: Duration,
    next_id: u64,
    closed: bool,
}

impl std::fmt::Debug for ExternalEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalEvaluator").field("id", &self.id).field("closed", &self.closed).finish()
    }
}

impl ExternalEvaluator {
    /// Spawns `program args...` and completes the handshake.
    pub fn spawn(
        program: &str,
        args: &[String],
        specs: Vec<ObjectiveSpec>,
        space_name: &str,
        timeout: Duration,
    ) -> Result<Self, EvalError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError::HandshakeFailed(format!("cannot start `{program}`: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        let stdin = child.stdin.take();
        let mut ev = ExternalEvaluator {
            id: format!("external:{program}"),
            specs,
            child,
            stdin,
            lines: rx,
            timeout,
            next_id: 0,
            closed: false,
        };
        ev.handshake(space_name)?;
        Ok(ev)
    }

    /// Splits a shell-like command line on whitespace. No quoting support.
    pub fn spawn_command_line(
        command: &str,
        specs: Vec<ObjectiveSpec>,
        space_name: &str,
        timeout: Duration,
    ) -> Result<Self, EvalError> {
        let mut parts = command.split_whitespace();
        let program = parts.next().ok_or_else(|| EvalError::HandshakeFailed("empty command".into()))?;
        let args: Vec<String> = parts.map(str::to_string).collect();
        Self::spawn(program, &args, specs, space_name, timeout)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    fn send(&mut self, req: &Request) -> Result<(), EvalError> {
        let stdin = self.stdin.as_mut().ok_or_else(|| EvalError::EvaluationFailed("evaluator stdin closed".into()))?;
        let mut line = req.to_line();
        line.push('\n');
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| EvalError::EvaluationFailed(format!("write to evaluator failed: {e}")))
    }

    fn handshake(&mut self, space_name: &str) -> Result<(), EvalError> {
        let hello = Request::Hello {
            objectives: self.specs.iter().map(|s| s.name.clone()).collect(),
            space: space_name.to_string(),
        };
        self.send(&hello).map_err(|e| EvalError::HandshakeFailed(e.to_string()))?;
        match self.lines.recv_timeout(self.timeout) {
            Ok(line) => match Response::parse(&line) {
                Ok(Response::Ready) => Ok(()),
                Ok(_) => Err(EvalError::HandshakeFailed(format!("expected ready, got {line}"))),
                Err(e) => Err(EvalError::HandshakeFailed(format!("malformed handshake reply `{line}`: {e}"))),
            },
            Err(RecvTimeoutError::Timeout) => Err(EvalError::HandshakeFailed("no ready message before timeout".into())),
            Err(RecvTimeoutError::Disconnected) => Err(EvalError::HandshakeFailed(self.exit_description())),
        }
    }

    fn exit_description(&mut self) -> String {
        match self.child.try_wait() {
            Ok(Some(status)) => format!("evaluator exited ({status})"),
            _ => "evaluator closed its output".to_string(),
        }
    }

    fn parse_result(&self, objectives: serde_json::Map<String, serde_json::Value>, line: &str) -> Result<ObjectiveVector, EvalError> {
        let mut named = BTreeMap::new();
        for (k, v) in objectives {
            let x = v.as_f64().ok_or_else(|| EvalError::ProtocolError {
                detail: format!("objective `{k}` is not a number"),
                raw: line.to_string(),
            })?;
            named.insert(k, x);
        }
        select_objectives(&named, &self.specs)
    }

    fn close(&mut self) {
        if !self.closed {
            self.closed = true;
            let _ = self.send(&Request::Bye);
            self.stdin = None;
        }
    }
}

impl Evaluator for ExternalEvaluator {
    fn id(&self) -> &str {
        &self.id
    }

    fn objectives(&self) -> &[ObjectiveSpec] {
        &self.specs
    }

    fn evaluate_many(&mut self, batch: &[Genotype]) -> Vec<Result<ObjectiveVector, EvalError>> {
        let mut results: Vec<Option<Result<ObjectiveVector, EvalError>>> = vec![None; batch.len()];
        let mut pending: HashMap<u64, usize> = HashMap::new();
        for (pos, g) in batch.iter().enumerate() {
            let id = self.next_id;
            self.next_id += 1;
            match self.send(&Request::Eval { id, genes: g.genes().to_vec() }) {
                Ok(()) => {
                    pending.insert(id, pos);
                }
                Err(e) => results[pos] = Some(Err(e)),
            }
        }
        while !pending.is_empty() {
            let line = match self.lines.recv_timeout(self.timeout) {
                Ok(line) => line,
                Err(RecvTimeoutError::Timeout) => {
                    let secs = self.timeout.as_secs_f64();
                    for (_, pos) in pending.drain() {
                        results[pos] = Some(Err(EvalError::EvaluationTimeout(secs)));
                    }
                    break;
                }
                Err(RecvTimeoutError::Disconnected) => {
                    let why = self.exit_description();
                    for (_, pos) in pending.drain() {
                        results[pos] = Some(Err(EvalError::EvaluationFailed(why.clone())));
                    }
                    self.stdin = None;
                    self.closed = true;
                    break;
                }
            };
            match Response::parse(&line) {
                Ok(Response::Result { id, objectives }) => match pending.remove(&id) {
                    Some(pos) => results[pos] = Some(self.parse_result(objectives, &line)),
                    None => log::warn!("ignoring response for unknown id {id}"),
                },
                Ok(Response::Error { id, message }) => match pending.remove(&id) {
                    Some(pos) => results[pos] = Some(Err(EvalError::EvaluationFailed(message))),
                    None => log::warn!("ignoring error for unknown id {id}"),
                },
                Ok(Response::Ready) => log::warn!("unexpected ready message mid-batch"),
                Err(detail) => {
                    // attribute to the request when an id is recoverable,
                    // otherwise the stream can no longer be trusted
                    let id = serde_json::from_str::<serde_json::Value>(&line)
                        .ok()
                        .and_then(|v| v.get("id").and_then(|i| i.as_u64()));
                    match id.and_then(|id| pending.remove(&id)) {
                        Some(pos) => results[pos] = Some(Err(EvalError::ProtocolError { detail, raw: line })),
                        None => {
                            for (_, pos) in pending.drain() {
                                results[pos] = Some(Err(EvalError::ProtocolError { detail: detail.clone(), raw: line.clone() }));
                            }
                        }
                    }
                }
            }
        }
        results.into_iter().map(|r| r.expect("every request resolved")).collect()
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        self.close();
        for _ in 0..50 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
