use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataio::{frame_path, FrameSequence};
use crate::geometry::{BoundingBox, Category, Detection};

use super::{Detector, DetectorError, DetectorResult};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Serialize)]
struct Hello {
    op: &'static str,
    version: u32,
}

#[derive(Deserialize)]
struct HelloReply {
    ok: bool,
    name: String,
}

#[derive(Serialize)]
struct DetectRequest<'a> {
    op: &'static str,
    frame: usize,
    path: &'a str,
    category: Category,
}

#[derive(Deserialize)]
struct DetectReply {
    detections: Vec<WireDetection>,
}

#[derive(Deserialize)]
struct WireDetection {
    category: Category,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    conf: f64,
}

/// A detector living in another process, spoken to in newline-delimited JSON
/// over its standard input and output. One request is in flight at a time.
///
/// A timed-out request leaves the stream out of step, so every later call
/// fails with the same error.
pub struct ExternalDetector {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    name: String,
    broken: Option<String>,
}

impl std::fmt::Debug for ExternalDetector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalDetector").field("name", &self.name).field("pid", &self.child.id()).finish()
    }
}

fn protocol(line: &str, message: impl Into<String>) -> DetectorError {
    DetectorError::Protocol { line: line.to_string(), message: message.into() }
}

/// Parses one detect response line.
pub(crate) fn parse_detections(line: &str) -> Result<Vec<Detection>, DetectorError> {
    let reply: DetectReply = serde_json::from_str(line).map_err(|e| protocol(line, e.to_string()))?;
    reply
        .detections
        .into_iter()
        .map(|d| {
            if d.category == Category::N {
                return Err(protocol(line, "category N is not a detector output"));
            }
            let bbox = BoundingBox::new(d.x, d.y, d.w, d.h).map_err(|e| protocol(line, e.to_string()))?;
            Detection::new(bbox, d.category, d.conf).map_err(|e| protocol(line, e.to_string()))
        })
        .collect()
}

impl ExternalDetector {
    /// Starts `command` and performs the hello exchange.
    pub fn spawn(mut command: Command, timeout: Duration) -> Result<Self, DetectorError> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| DetectorError::Unavailable(format!("cannot start {command:?}: {e}")))?;
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
        let mut detector = Self { child, stdin: Some(stdin), lines: rx, timeout, name: String::new(), broken: None };
        let line = detector.exchange(&Hello { op: "hello", version: PROTOCOL_VERSION })?;
        let reply: HelloReply = serde_json::from_str(&line).map_err(|e| protocol(&line, e.to_string()))?;
        if !reply.ok {
            return Err(protocol(&line, "handshake refused"));
        }
        detector.name = reply.name;
        Ok(detector)
    }

    /// Runs a shell command line through `sh -c`.
    pub fn spawn_shell(command_line: &str, timeout: Duration) -> Result<Self, DetectorError> {
        let mut command = Command::new("sh");
        command.arg("-c").arg(command_line);
        Self::spawn(command, timeout)
    }

    /// Name the process reported in its handshake.
    pub fn name(&self) -> &str {
        &self.name
    }

    fn exchange<T: Serialize>(&mut self, request: &T) -> Result<String, DetectorError> {
        if let Some(reason) = &self.broken {
            return Err(DetectorError::Unavailable(reason.clone()));
        }
        let mut payload = serde_json::to_string(request).expect("requests serialize");
        payload.push('\n');
        let stdin = self.stdin.as_mut().ok_or_else(|| DetectorError::ChannelClosed("already shut down".into()))?;
        if let Err(e) = stdin.write_all(payload.as_bytes()).and_then(|_| stdin.flush()) {
            return Err(DetectorError::ChannelClosed(format!("write failed: {e}")));
        }
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(DetectorError::ChannelClosed(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                let reason = format!("no response within {:?}", self.timeout);
                self.broken = Some(reason.clone());
                Err(DetectorError::Unavailable(reason))
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.child.try_wait().ok().flatten();
                Err(DetectorError::ChannelClosed(match status {
                    Some(s) => format!("process exited ({s})"),
                    None => "process closed its output".into(),
                }))
            }
        }
    }

    /// Sends one detect request for the frame stored at `path`.
    pub fn detect_path(
        &mut self,
        frame_index: usize,
        path: &str,
        category: Category,
    ) -> Result<DetectorResult, DetectorError> {
        let line = self.exchange(&DetectRequest { op: "detect", frame: frame_index, path, category })?;
        Ok(DetectorResult::new(parse_detections(&line)?, 1.0))
    }

    /// Sends `bye` and waits for the process to exit with status 0.
    pub fn shutdown(mut self) -> Result<(), DetectorError> {
        self.finish()
    }

    fn finish(&mut self) -> Result<(), DetectorError> {
        let Some(mut stdin) = self.stdin.take() else {
            return Ok(());
        };
        let _ = stdin.write_all(b"{\"op\":\"bye\"}\n").and_then(|_| stdin.flush());
        drop(stdin);
        let deadline = Instant::now() + self.timeout;
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) if status.success() => return Ok(()),
                Ok(Some(status)) => {
                    return Err(DetectorError::ChannelClosed(format!("process exited with {status} after bye")))
                }
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                Ok(None) => {
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    return Err(DetectorError::Unavailable("process did not exit after bye".into()));
                }
                Err(e) => return Err(DetectorError::ChannelClosed(e.to_string())),
            }
        }
    }
}

impl Drop for ExternalDetector {
    fn drop(&mut self) {
        if self.stdin.is_some() {
            self.timeout = self.timeout.min(Duration::from_secs(1));
            let _ = self.finish();
        }
    }
}

impl Detector for ExternalDetector {
    fn detect(
        &mut self,
        sequence: &FrameSequence,
        frame_index: usize,
        category: Category,
    ) -> Result<DetectorResult, DetectorError> {
        let dir = sequence
            .source_dir()
            .ok_or_else(|| DetectorError::InvalidRequest("external detectors need a sequence stored on disk".into()))?;
        if frame_index >= sequence.len() {
            return Err(DetectorError::InvalidRequest(format!("frame {frame_index} outside the sequence")));
        }
        let path = frame_path(dir, frame_index);
        self.detect_path(frame_index, &path.to_string_lossy(), category)
    }
}
