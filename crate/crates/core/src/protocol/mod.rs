//! Newline-delimited JSON protocol spoken with generator, captioner and
//! detector adapters.
//!
//! Every session opens with `{"op":"hello"}`, answered by a [`Handshake`].
//! Requests carry an integer id that the adapter echoes back. The same JSON
//! bodies travel over a subprocess's stdio or as HTTP POST payloads.

pub mod golden;
pub mod server;
pub mod transport;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use server::{handle_line, serve_http, serve_stdio, Handler, HttpServer};
pub use transport::{InProcessTransport, HttpTransport, StdioTransport, Transport};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Img2img,
    Text2img,
    Caption,
    Detect,
}

impl Op {
    pub const ALL: [Op; 4] = [Op::Img2img, Op::Text2img, Op::Caption, Op::Detect];

    pub fn as_str(self) -> &'static str {
        match self {
            Op::Img2img => "img2img",
            Op::Text2img => "text2img",
            Op::Caption => "caption",
            Op::Detect => "detect",
        }
    }
}

impl std::fmt::Display for Op {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// All keys are always present on the wire; absent values are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    #[serde(default)]
    pub image_path: Option<String>,
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default)]
    pub strength: Option<f64>,
    #[serde(default)]
    pub steps: Option<u32>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Request {
    pub fn new(op: Op, rng_seed: u64) -> Self {
        Request {
            id: 0,
            op,
            image_path: None,
            prompt: None,
            strength: None,
            steps: None,
            rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedLabel {
    pub label: String,
    pub confidence: f64,
}

/// Successful result of one request.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Image(String),
    Caption(String),
    Labels(Vec<DetectedLabel>),
}

/// Response body. `id` is always serialized, as `null` when the request
/// could not be parsed far enough to read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<DetectedLabel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    fn empty(id: Option<u64>) -> Self {
        Response {
            id,
            image_path: None,
            caption: None,
            labels: None,
            error: None,
        }
    }

    pub fn error(id: Option<u64>, message: impl Into<String>) -> Self {
        Response {
            error: Some(message.into()),
            ..Response::empty(id)
        }
    }

    pub fn from_reply(id: u64, reply: Reply) -> Self {
        let mut r = Response::empty(Some(id));
        match reply {
            Reply::Image(p) => r.image_path = Some(p),
            Reply::Caption(c) => r.caption = Some(c),
            Reply::Labels(l) => r.labels = Some(l),
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub capabilities: Vec<Op>,
    pub single_flight: bool,
}

impl Handshake {
    pub fn supports(&self, op: Op) -> bool {
        self.capabilities.contains(&op)
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("failed to start adapter: {0}")]
    Spawn(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("request {0} timed out after {1:?}")]
    Timeout(u64, Duration),
    #[error("adapter closed the connection")]
    Closed,
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("response id {got:?} does not echo request id {expected}")]
    IdMismatch { expected: u64, got: Option<u64> },
    #[error("adapter error: {0}")]
    Remote(String),
    #[error("adapter does not support {0}")]
    Unsupported(Op),
}

/// Client side of one adapter session.
///
/// Request ids are allocated here. When the adapter declares
/// `single_flight`, calls are serialized through an internal lock.
pub struct AdapterClient {
    transport: Box<dyn Transport>,
    handshake: Handshake,
    next_id: AtomicU64,
    gate: Option<Mutex<()>>,
    timeout: Duration,
}

impl std::fmt::Debug for AdapterClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterClient")
            .field("handshake", &self.handshake)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl AdapterClient {
    /// Performs the handshake.
    pub fn connect(transport: Box<dyn Transport>, timeout: Duration) -> Result<Self, ProtocolError> {
        let line = transport.exchange(r#"{"op":"hello"}"#, timeout)?;
        let handshake: Handshake = serde_json::from_str(&line)
            .map_err(|e| ProtocolError::Malformed(format!("handshake: {e}: {line}")))?;
        let gate = handshake.single_flight.then(|| Mutex::new(()));
        Ok(AdapterClient {
            transport,
            handshake,
            next_id: AtomicU64::new(1),
            gate,
            timeout,
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn lock(&self) -> Option<MutexGuard<'_, ()>> {
        self.gate
            .as_ref()
            .map(|m| m.lock().unwrap_or_else(|e| e.into_inner()))
    }

    /// Sends `request` with a fresh id and returns the checked reply.
    pub fn call(&self, mut request: Request) -> Result<Reply, ProtocolError> {
        if !self.handshake.supports(request.op) {
            return Err(ProtocolError::Unsupported(request.op));
        }
        request.id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let line = serde_json::to_string(&request).expect("request serializes");

        let raw = {
            let _guard = self.lock();
            self.transport.exchange(&line, self.timeout)?
        };
        let response: Response =
            serde_json::from_str(&raw).map_err(|e| ProtocolError::Malformed(format!("{e}: {raw}")))?;
        if response.id != Some(request.id) {
            return Err(ProtocolError::IdMismatch {
                expected: request.id,
                got: response.id,
            });
        }
        if let Some(err) = response.error {
            return Err(ProtocolError::Remote(err));
        }
        let reply = match request.op {
            Op::Img2img | Op::Text2img => response.image_path.map(Reply::Image),
            Op::Caption => response.caption.map(Reply::Caption),
            Op::Detect => response.labels.map(Reply::Labels),
        };
        reply.ok_or_else(|| ProtocolError::Malformed(format!("{} response lacks its result: {raw}", request.op)))
    }

    pub fn generate(&self, request: Request) -> Result<String, ProtocolError> {
        match self.call(request)? {
            Reply::Image(path) => Ok(path),
            other => Err(ProtocolError::Malformed(format!("expected image path, got {other:?}"))),
        }
    }

    pub fn caption(&self, image_path: &str, rng_seed: u64) -> Result<String, ProtocolError> {
        let mut req = Request::new(Op::Caption, rng_seed);
        req.image_path = Some(image_path.to_owned());
        match self.call(req)? {
            Reply::Caption(c) => Ok(c),
            other => Err(ProtocolError::Malformed(format!("expected caption, got {other:?}"))),
        }
    }

    pub fn detect(&self, image_path: &str, rng_seed: u64) -> Result<Vec<DetectedLabel>, ProtocolError> {
        let mut req = Request::new(Op::Detect, rng_seed);
        req.image_path = Some(image_path.to_owned());
        match self.call(req)? {
            Reply::Labels(l) => Ok(l),
            other => Err(ProtocolError::Malformed(format!("expected labels, got {other:?}"))),
        }
    }
}

/// Reads `id` from a raw JSON body if it is an unsigned integer.
pub(crate) fn raw_id(value: &Value) -> Option<u64> {
    value.get("id").and_then(Value::as_u64)
}
