use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::server::{handle_line, Handler};
use super::ProtocolError;

/// Moves one request line to an adapter and returns its response line.
pub trait Transport: Send + Sync {
    fn exchange(&self, line: &str, timeout: Duration) -> Result<String, ProtocolError>;
}

/// Calls a [`Handler`] in this process, still going through the JSON codec.
pub struct InProcessTransport {
    handler: Arc<dyn Handler>,
}

impl InProcessTransport {
    pub fn new(handler: Arc<dyn Handler>) -> Self {
        InProcessTransport { handler }
    }
}

impl Transport for InProcessTransport {
    fn exchange(&self, line: &str, _timeout: Duration) -> Result<String, ProtocolError> {
        Ok(handle_line(self.handler.as_ref(), line))
    }
}

struct StdioSession {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    poisoned: bool,
}

/// A spawned adapter process spoken to over its stdin/stdout.
///
/// One request is in flight at a time. A timed-out session is killed, since
/// its late reply would desynchronize the stream.
pub struct StdioTransport {
    session: Mutex<StdioSession>,
}

impl StdioTransport {
    pub fn spawn(command: &[String]) -> Result<Self, ProtocolError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| ProtocolError::Spawn("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ProtocolError::Spawn(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(StdioTransport {
            session: Mutex::new(StdioSession {
                child,
                stdin,
                lines: rx,
                poisoned: false,
            }),
        })
    }
}

impl Transport for StdioTransport {
    fn exchange(&self, line: &str, timeout: Duration) -> Result<String, ProtocolError> {
        let mut s = self.session.lock().unwrap_or_else(|e| e.into_inner());
        if s.poisoned {
            return Err(ProtocolError::Closed);
        }
        let write = writeln!(s.stdin, "{line}").and_then(|_| s.stdin.flush());
        if let Err(e) = write {
            s.poisoned = true;
            return Err(ProtocolError::Transport(format!("write to adapter: {e}")));
        }
        match s.lines.recv_timeout(timeout) {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(e)) => {
                s.poisoned = true;
                Err(ProtocolError::Transport(format!("read from adapter: {e}")))
            }
            Err(RecvTimeoutError::Disconnected) => {
                s.poisoned = true;
                Err(ProtocolError::Closed)
            }
            Err(RecvTimeoutError::Timeout) => {
                s.poisoned = true;
                let _ = s.child.kill();
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .as_ref()
                    .and_then(super::raw_id)
                    .unwrap_or(0);
                Err(ProtocolError::Timeout(id, timeout))
            }
        }
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        let s = self.session.get_mut().unwrap_or_else(|e| e.into_inner());
        let _ = s.child.kill();
        let _ = s.child.wait();
    }
}

/// POSTs each request body to a fixed URL.
pub struct HttpTransport {
    url: String,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>) -> Self {
        HttpTransport { url: url.into() }
    }
}

impl Transport for HttpTransport {
    fn exchange(&self, line: &str, timeout: Duration) -> Result<String, ProtocolError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let mut response = agent
            .post(&self.url)
            .header("Content-Type", "application/json")
            .send(line)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => ProtocolError::Timeout(0, timeout),
                other => ProtocolError::Transport(other.to_string()),
            })?;
        response
            .body_mut()
            .read_to_string()
            .map(|s| s.trim().to_owned())
            .map_err(|e| ProtocolError::Transport(e.to_string()))
    }
}
