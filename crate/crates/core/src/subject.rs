//! Handles over black-box decision software.
//!
//! An external subject is a long-running process that reads one request per
//! line on standard input (the input's label texts joined by `,`) and answers
//! each with exactly one of `true`, `false`, `1` or `0` on standard output.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::fixtures::Fixture;
use crate::schema::{Input, Schema};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubjectErrorKind {
    Spawn(String),
    Exited(String),
    Malformed(String),
    Timeout(Duration),
    Io(String),
    InvalidInput(String),
}

impl fmt::Display for SubjectErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubjectErrorKind::Spawn(e) => write!(f, "could not start subject: {e}"),
            SubjectErrorKind::Exited(status) => write!(f, "subject exited ({status})"),
            SubjectErrorKind::Malformed(line) => write!(f, "malformed response {line:?}"),
            SubjectErrorKind::Timeout(t) => write!(f, "no response within {:.1}s", t.as_secs_f64()),
            SubjectErrorKind::Io(e) => write!(f, "i/o error talking to subject: {e}"),
            SubjectErrorKind::InvalidInput(e) => write!(f, "invalid input: {e}"),
        }
    }
}

/// A failed evaluation, carrying the wire form of the input that caused it.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{kind} while evaluating `{input}`")]
pub struct SubjectError {
    pub kind: SubjectErrorKind,
    pub input: String,
}

/// Anything that can decide inputs. Implementations must be deterministic.
pub trait Evaluator: Sync {
    fn evaluate(&self, input: &Input) -> Result<bool, SubjectError>;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, input: &Input) -> Result<bool, SubjectError> {
        (**self).evaluate(input)
    }
}

/// Distance between two output labels, bounded in `[0, 1]` and zero on equal
/// labels.
pub trait OutputDistance {
    fn distance(&self, a: bool, b: bool) -> f64;
}

/// The discrete metric on binary outputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiscreteDistance;

impl OutputDistance for DiscreteDistance {
    fn distance(&self, a: bool, b: bool) -> f64 {
        default_distance(a, b)
    }
}

pub fn default_distance(a: bool, b: bool) -> f64 {
    if a == b {
        0.0
    } else {
        1.0
    }
}

/// Parses one response token. Only the four lowercase tokens are accepted.
pub fn parse_response(line: &str) -> Option<bool> {
    match line {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn spawn(command: &[String]) -> Result<Worker, SubjectErrorKind> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| SubjectErrorKind::Spawn("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SubjectErrorKind::Spawn(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Worker {
            child,
            stdin,
            lines: rx,
        })
    }

    fn exit_status(&mut self) -> String {
        // give a crashing child a moment to be reaped
        for _ in 0..20 {
            if let Ok(Some(status)) = self.child.try_wait() {
                return status.to_string();
            }
            thread::sleep(Duration::from_millis(5));
        }
        "closed its output".to_owned()
    }

    fn exchange(&mut self, request: &str, timeout: Duration) -> Result<bool, SubjectErrorKind> {
        let sent = self
            .stdin
            .write_all(request.as_bytes())
            .and_then(|_| self.stdin.write_all(b"\n"))
            .and_then(|_| self.stdin.flush());
        if sent.is_err() {
            return Err(SubjectErrorKind::Exited(self.exit_status()));
        }
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => {
                let token = line.strip_suffix('\r').unwrap_or(&line);
                parse_response(token).ok_or(SubjectErrorKind::Malformed(line))
            }
            Ok(Err(e)) => Err(SubjectErrorKind::Io(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(SubjectErrorKind::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(SubjectErrorKind::Exited(self.exit_status())),
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// An external program speaking the line protocol.
///
/// Non-reentrant subjects (the default) run as a single process and requests
/// are serialized through it. Reentrant subjects get one process per
/// concurrent caller.
pub struct ProcessSubject {
    command: Vec<String>,
    schema: Schema,
    timeout: Duration,
    reentrant: bool,
    exclusive: Mutex<Option<Worker>>,
    idle: Mutex<Vec<Worker>>,
    invocations: AtomicU64,
}

impl ProcessSubject {
    pub fn new(command: Vec<String>, schema: Schema) -> Self {
        ProcessSubject {
            command,
            schema,
            timeout: DEFAULT_TIMEOUT,
            reentrant: false,
            exclusive: Mutex::new(None),
            idle: Mutex::new(Vec::new()),
            invocations: AtomicU64::new(0),
        }
    }

    /// Splits a shell-style command line into program and arguments.
    pub fn from_command_line(line: &str, schema: Schema) -> Result<Self, SubjectError> {
        let command = shlex::split(line)
            .filter(|parts| !parts.is_empty())
            .ok_or_else(|| SubjectError {
                kind: SubjectErrorKind::Spawn(format!("cannot parse command line {line:?}")),
                input: String::new(),
            })?;
        Ok(ProcessSubject::new(command, schema))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn reentrant(mut self, reentrant: bool) -> Self {
        self.reentrant = reentrant;
        self
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    /// Number of request/response exchanges attempted so far.
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }

    fn run_exclusive(&self, request: &str) -> Result<bool, SubjectErrorKind> {
        let mut slot = self.exclusive.lock().unwrap_or_else(|e| e.into_inner());
        if slot.is_none() {
            *slot = Some(Worker::spawn(&self.command)?);
        }
        let result = slot.as_mut().expect("worker present").exchange(request, self.timeout);
        if result.is_err() {
            // the stream may be out of step; never reuse this process
            *slot = None;
        }
        result
    }

    fn run_pooled(&self, request: &str) -> Result<bool, SubjectErrorKind> {
        let pooled = self.idle.lock().unwrap_or_else(|e| e.into_inner()).pop();
        let mut worker = match pooled {
            Some(w) => w,
            None => Worker::spawn(&self.command)?,
        };
        let result = worker.exchange(request, self.timeout);
        if result.is_ok() {
            self.idle.lock().unwrap_or_else(|e| e.into_inner()).push(worker);
        }
        result
    }
}

impl Evaluator for ProcessSubject {
    fn evaluate(&self, input: &Input) -> Result<bool, SubjectError> {
        if let Err(e) = self.schema.validate_input(input) {
            return Err(SubjectError {
                kind: SubjectErrorKind::InvalidInput(e.to_string()),
                input: format!("{:?}", input.values()),
            });
        }
        let request = self.schema.encode_line(input);
        self.invocations.fetch_add(1, Ordering::Relaxed);
        let result = if self.reentrant {
            self.run_pooled(&request)
        } else {
            self.run_exclusive(&request)
        };
        result.map_err(|kind| SubjectError { kind, input: request })
    }
}

impl fmt::Debug for ProcessSubject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProcessSubject")
            .field("command", &self.command)
            .field("timeout", &self.timeout)
            .field("reentrant", &self.reentrant)
            .finish()
    }
}

/// The software under test.
#[derive(Debug)]
pub enum Subject {
    Process(ProcessSubject),
    Fixture(Fixture),
}

impl Subject {
    pub fn is_reentrant(&self) -> bool {
        match self {
            Subject::Process(p) => p.reentrant,
            Subject::Fixture(_) => true,
        }
    }
}

impl Evaluator for Subject {
    fn evaluate(&self, input: &Input) -> Result<bool, SubjectError> {
        match self {
            Subject::Process(p) => p.evaluate(input),
            Subject::Fixture(f) => f.evaluate(input),
        }
    }
}

/// One uncached evaluation of `input`.
pub fn evaluate_raw(subject: &Subject, input: &Input, schema: &Schema) -> Result<bool, SubjectError> {
    schema.validate_input(input).map_err(|e| SubjectError {
        kind: SubjectErrorKind::InvalidInput(e.to_string()),
        input: format!("{:?}", input.values()),
    })?;
    subject.evaluate(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{Fixture, FixtureSpec};
    use crate::schema::Characteristic;

    fn schema() -> Schema {
        Schema::new(vec![
            Characteristic::new("race", ["green", "purple"]),
            Characteristic::new("age", ["lt40", "geq40"]),
        ])
        .unwrap()
    }

    fn sh(script: &str) -> ProcessSubject {
        ProcessSubject::new(vec!["sh".into(), "-c".into(), script.into()], schema())
    }

    #[test]
    fn distance_axioms() {
        assert_eq!(default_distance(true, true), 0.0);
        assert_eq!(default_distance(true, false), 1.0);
        assert_eq!(default_distance(false, false), 0.0);
        for a in [true, false] {
            for b in [true, false] {
                assert_eq!(DiscreteDistance.distance(a, b), DiscreteDistance.distance(b, a));
            }
        }
    }

    #[test]
    fn response_tokens() {
        assert_eq!(parse_response("true"), Some(true));
        assert_eq!(parse_response("1"), Some(true));
        assert_eq!(parse_response("false"), Some(false));
        assert_eq!(parse_response("0"), Some(false));
        for bad in ["TRUE", "True", "yes", "maybe", "", " 1", "10"] {
            assert_eq!(parse_response(bad), None, "{bad:?}");
        }
    }

    #[test]
    fn fixtures_through_evaluate_raw() {
        let s = schema();
        let t = Subject::Fixture(Fixture::new(FixtureSpec::Const(true), &s).unwrap());
        assert!(evaluate_raw(&t, &Input::new(vec![0, 1]), &s).unwrap());
        let echo = Subject::Fixture(Fixture::new(FixtureSpec::EchoChar(0), &s).unwrap());
        assert!(evaluate_raw(&echo, &Input::new(vec![1, 0]), &s).unwrap());
        assert!(!evaluate_raw(&echo, &Input::new(vec![0, 0]), &s).unwrap());
        assert!(evaluate_raw(&echo, &Input::new(vec![2, 0]), &s).is_err());
    }

    #[test]
    fn process_answers_in_order() {
        // true iff race is purple
        let p = sh(r#"while IFS=, read race age; do if [ "$race" = purple ]; then echo true; else echo 0; fi; done"#);
        let inputs = [[1, 0], [0, 0], [1, 1], [0, 1], [1, 0]];
        for k in inputs {
            let got = p.evaluate(&Input::new(k.to_vec())).unwrap();
            assert_eq!(got, k[0] == 1);
        }
        assert_eq!(p.invocations(), 5);
    }

    #[test]
    fn malformed_response_is_an_error() {
        let p = sh("while read line; do echo maybe; done");
        let err = p.evaluate(&Input::new(vec![1, 0])).unwrap_err();
        assert_eq!(err.kind, SubjectErrorKind::Malformed("maybe".into()));
        assert_eq!(err.input, "purple,lt40");
    }

    #[test]
    fn exit_is_an_error() {
        let p = sh("read line; exit 3");
        let err = p.evaluate(&Input::new(vec![0, 0])).unwrap_err();
        assert!(matches!(err.kind, SubjectErrorKind::Exited(_)), "{err}");
        assert_eq!(err.input, "green,lt40");
    }

    #[test]
    fn timeout_is_an_error() {
        let p = sh("read line; sleep 5").with_timeout(Duration::from_millis(100));
        let err = p.evaluate(&Input::new(vec![0, 0])).unwrap_err();
        assert!(matches!(err.kind, SubjectErrorKind::Timeout(_)));
    }

    #[test]
    fn missing_program_fails_to_spawn() {
        let p = ProcessSubject::new(vec!["/nonexistent/subject".into()], schema());
        let err = p.evaluate(&Input::new(vec![0, 0])).unwrap_err();
        assert!(matches!(err.kind, SubjectErrorKind::Spawn(_)));
    }

    #[test]
    fn reentrant_pool_reuses_processes() {
        let p = sh("while read line; do echo 1; done").reentrant(true);
        thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..10 {
                        assert!(p.evaluate(&Input::new(vec![0, 1])).unwrap());
                    }
                });
            }
        });
        assert!(p.idle.lock().unwrap().len() <= 4);
        assert_eq!(p.invocations(), 40);
    }
}
