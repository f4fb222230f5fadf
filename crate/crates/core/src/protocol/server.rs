//! Adapter-side dispatch: line decoding plus stdio and HTTP serving loops.

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::Value;

use super::{raw_id, Handshake, ProtocolError, Reply, Request, Response};

/// Something that can answer protocol requests.
pub trait Handler: Send + Sync {
    fn handshake(&self) -> Handshake;
    fn handle(&self, request: &Request) -> Result<Reply, String>;
}

/// Decodes one request line and encodes the response line (no trailing newline).
///
/// Unparseable JSON yields an error with `id: null`; an unknown op or bad
/// field yields an error that still echoes the id.
pub fn handle_line(handler: &dyn Handler, line: &str) -> String {
    let response = match serde_json::from_str::<Value>(line) {
        Err(e) => Response::error(None, format!("malformed request: {e}")),
        Ok(value) if !value.is_object() => Response::error(None, "malformed request: not a JSON object"),
        Ok(value) if value.get("op").and_then(Value::as_str) == Some("hello") => {
            return serde_json::to_string(&handler.handshake()).expect("handshake serializes");
        }
        Ok(value) => {
            let id = raw_id(&value);
            match (id, serde_json::from_value::<Request>(value.clone())) {
                (_, Ok(req)) => match handler.handle(&req) {
                    Ok(reply) => Response::from_reply(req.id, reply),
                    Err(msg) => Response::error(Some(req.id), msg),
                },
                (id, Err(e)) => {
                    let op = value.get("op").and_then(Value::as_str).unwrap_or("<missing>");
                    if e.to_string().contains("unknown variant") {
                        Response::error(id, format!("unknown op {op:?}"))
                    } else {
                        Response::error(id, format!("invalid request: {e}"))
                    }
                }
            }
        }
    };
    serde_json::to_string(&response).expect("response serializes")
}

/// Answers requests line by line until end of input.
pub fn serve_stdio<R: BufRead, W: Write>(handler: &dyn Handler, input: R, mut output: W) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle_line(handler, &line);
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}

/// A running HTTP adapter endpoint. Stops when dropped.
pub struct HttpServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl HttpServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/", self.addr)
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

/// Serves POSTed request bodies on `bind` (use port 0 for an ephemeral port).
pub fn serve_http(handler: Arc<dyn Handler>, bind: &str) -> Result<HttpServer, ProtocolError> {
    let server = tiny_http::Server::http(bind).map_err(|e| ProtocolError::Transport(e.to_string()))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| ProtocolError::Transport("server is not bound to an IP address".into()))?;
    let server = Arc::new(server);
    let worker_server = Arc::clone(&server);
    let worker = std::thread::spawn(move || {
        for mut request in worker_server.incoming_requests() {
            let mut body = String::new();
            let reply = match request.as_reader().read_to_string(&mut body) {
                Ok(_) => handle_line(handler.as_ref(), body.trim()),
                Err(e) => serde_json::to_string(&Response::error(None, format!("unreadable body: {e}")))
                    .expect("response serializes"),
            };
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
                .expect("static header is valid");
            let _ = request.respond(tiny_http::Response::from_string(reply).with_header(header));
        }
    });
    Ok(HttpServer {
        server,
        addr,
        worker: Some(worker),
    })
}
