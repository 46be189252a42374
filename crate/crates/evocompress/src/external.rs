//! Client side of the line-delimited JSON evaluation protocol.
//!
//! A pool of worker processes, each with at most one request in flight.
//! A worker that exits or misses the deadline scores its candidate as
//! accuracy 0 and is restarted; a malformed or mismatched reply aborts.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use evocompress_core::evaluator::{Candidate, Evaluator};
use evocompress_core::genome::GenomeSchema;
use evocompress_core::model::ModelSpec;
use evocompress_core::Error;
use serde_json::{json, Value};

use crate::error::{AppError, Result};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone)]
pub struct WorkerCommand {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

enum Reply {
    Line(String),
    Lost(String),
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Worker {
    fn spawn(cmd: &WorkerCommand, hello: &str) -> Result<Worker> {
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AppError::Worker(format!("cannot launch {}: {e}", cmd.program)))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if !line.trim().is_empty() && tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut worker = Worker { child, stdin, lines };
        match worker.exchange(hello, cmd.timeout) {
            Reply::Line(line) => {
                let ready: Value = serde_json::from_str(&line)
                    .map_err(|e| AppError::Worker(format!("handshake reply is not JSON: {e}")))?;
                if ready["type"] != "ready" {
                    return Err(AppError::Worker(format!("expected ready, got {line}")));
                }
                Ok(worker)
            }
            Reply::Lost(why) => {
                worker.kill();
                Err(AppError::Worker(format!("handshake failed: {why}")))
            }
        }
    }

    fn exchange(&mut self, line: &str, timeout: Duration) -> Reply {
        if let Err(e) = writeln!(self.stdin, "{line}").and_then(|_| self.stdin.flush()) {
            return Reply::Lost(format!("write failed: {e}"));
        }
        match self.lines.recv_timeout(timeout) {
            Ok(line) => Reply::Line(line),
            Err(RecvTimeoutError::Timeout) => Reply::Lost(format!("no reply within {timeout:?}")),
            Err(RecvTimeoutError::Disconnected) => Reply::Lost("worker closed its output".into()),
        }
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn shutdown(mut self) {
        let _ = writeln!(self.stdin, "{}", json!({"type": "bye"})).and_then(|_| self.stdin.flush());
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        self.kill();
    }
}

/// Parses one result line for request `id`.
pub fn parse_result(line: &str, id: u64) -> Result<f64, Error> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| Error::Protocol(format!("malformed response {line:?}: {e}")))?;
    if value["type"] != "result" {
        return Err(Error::Protocol(format!("expected a result object, got {line}")));
    }
    match value["id"].as_u64() {
        Some(got) if got == id => {}
        Some(got) => return Err(Error::Protocol(format!("response id {got} does not match request id {id}"))),
        None => return Err(Error::Protocol(format!("response without an integer id: {line}"))),
    }
    match value["accuracy"].as_f64() {
        Some(acc) if (0.0..=1.0).contains(&acc) => Ok(acc),
        _ => Err(Error::Protocol(format!("response accuracy missing or outside [0, 1]: {line}"))),
    }
}

pub struct ExternalEvaluator {
    command: WorkerCommand,
    hello: String,
    pool: Mutex<Vec<Worker>>,
    next_id: AtomicU64,
    lost: AtomicUsize,
}

impl ExternalEvaluator {
    /// Launches `workers` processes and completes the handshake with each.
    pub fn launch(command: WorkerCommand, workers: usize, schema: &GenomeSchema, model: &ModelSpec) -> Result<Self> {
        let hello = json!({
            "type": "hello",
            "version": PROTOCOL_VERSION,
            "schema": schema.descriptors,
            "model_manifest": model,
        })
        .to_string();
        let pool = (0..workers.max(1))
            .map(|_| Worker::spawn(&command, &hello))
            .collect::<Result<Vec<_>>>()?;
        Ok(ExternalEvaluator {
            command,
            hello,
            pool: Mutex::new(pool),
            next_id: AtomicU64::new(0),
            lost: AtomicUsize::new(0),
        })
    }

    /// Candidates scored 0 because their worker exited or timed out.
    pub fn lost_evaluations(&self) -> usize {
        self.lost.load(Ordering::Relaxed)
    }

    fn run_one(&self, worker: &mut Worker, candidate: Candidate<'_>) -> Result<f64, Error> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let request = json!({
            "type": "eval",
            "id": id,
            "genome": candidate.genome,
            "plan": candidate.plan,
        })
        .to_string();
        match worker.exchange(&request, self.command.timeout) {
            Reply::Line(line) => parse_result(&line, id),
            Reply::Lost(why) => {
                self.lost.fetch_add(1, Ordering::Relaxed);
                log::warn!("evaluation {id} lost ({why}); scoring it as accuracy 0 and restarting the worker");
                worker.kill();
                *worker = Worker::spawn(&self.command, &self.hello)
                    .map_err(|e| Error::Evaluation(format!("restarting worker: {e}")))?;
                Ok(0.0)
            }
        }
    }
}

impl Evaluator for ExternalEvaluator {
    fn accuracy(&self, candidate: Candidate<'_>) -> Result<f64, Error> {
        self.accuracy_batch(&[candidate]).pop().expect("one result per candidate")
    }

    fn accuracy_batch(&self, candidates: &[Candidate<'_>]) -> Vec<Result<f64, Error>> {
        let mut workers = std::mem::take(&mut *self.pool.lock().expect("worker pool poisoned"));
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let slots: Vec<Mutex<Option<Result<f64, Error>>>> = candidates.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|scope| {
            for worker in workers.iter_mut() {
                let (next, abort, slots) = (&next, &abort, &slots);
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= candidates.len() || abort.load(Ordering::Relaxed) {
                        break;
                    }
                    let result = self.run_one(worker, candidates[i]);
                    if result.is_err() {
                        abort.store(true, Ordering::Relaxed);
                    }
                    *slots[i].lock().expect("slot poisoned") = Some(result);
                });
            }
        });
        *self.pool.lock().expect("worker pool poisoned") = workers;
        slots
            .into_iter()
            .map(|slot| {
                slot.into_inner()
                    .expect("slot poisoned")
                    .unwrap_or_else(|| Err(Error::Evaluation("batch aborted after an earlier failure".into())))
            })
            .collect()
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        let workers = std::mem::take(self.pool.get_mut().expect("worker pool poisoned"));
        for worker in workers {
            worker.shutdown();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_lines() {
        assert_eq!(parse_result(r#"{"type":"result","id":3,"accuracy":0.75}"#, 3).unwrap(), 0.75);
        let mismatch = parse_result(r#"{"type":"result","id":4,"accuracy":0.75}"#, 3).unwrap_err();
        assert!(mismatch.to_string().contains("does not match"));
        assert!(parse_result("not json", 3).is_err());
        assert!(parse_result(r#"{"type":"result","id":3,"accuracy":1.5}"#, 3).is_err());
        assert!(parse_result(r#"{"type":"ready"}"#, 3).is_err());
    }
}
