//! A minimal HTTP/1.1 server exposing any [`Backend`] over the wire
//! protocol. Used to stand up oracle servers for client and conformance
//! tests; it closes every connection after one response.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde_json::json;

use super::{Backend, GenerateRequest, HiddenRequest, LmError, ScoreRequest};

/// Maps (method, path, body) to (status, JSON body).
pub type Handler = dyn Fn(&str, &str, &[u8]) -> (u16, String) + Send + Sync;

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Block until the server stops (it never does on its own).
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serve `handler` on `addr` (use port 0 for an ephemeral port).
pub fn spawn_handler(addr: &str, handler: Arc<Handler>) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let handler = handler.clone();
            std::thread::spawn(move || {
                let _ = handle_connection(stream, &*handler);
            });
        }
    });
    Ok(ServerHandle { addr, stop, thread: Some(thread) })
}

pub fn spawn_backend(addr: &str, backend: Arc<dyn Backend>) -> std::io::Result<ServerHandle> {
    spawn_handler(addr, Arc::new(move |method: &str, path: &str, body: &[u8]| route(&*backend, method, path, body)))
}

fn handle_connection(stream: TcpStream, handler: &Handler) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let (status, payload) = handler(&method, &path, &body);
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        422 => "Unprocessable Entity",
        501 => "Not Implemented",
        _ => "Error",
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}

fn error_body(message: &str) -> String {
    json!({ "error": message }).to_string()
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, (u16, String)> {
    serde_json::from_slice(body).map_err(|e| (400, error_body(&format!("bad request body: {e}"))))
}

fn respond<T: serde::Serialize>(result: Result<T, LmError>) -> (u16, String) {
    match result {
        Ok(v) => (200, serde_json::to_string(&v).expect("response serializes")),
        Err(e) => {
            let status = match &e {
                LmError::ContextOverflow(_) => 422,
                LmError::InvalidRequest(_) => 400,
                LmError::UnsupportedByBackend(_) => 501,
                _ => 500,
            };
            (status, error_body(&e.to_string()))
        }
    }
}

/// Dispatch one protocol request to `backend`.
pub fn route(backend: &dyn Backend, method: &str, path: &str, body: &[u8]) -> (u16, String) {
    let out = match (method, path) {
        ("GET", "/v1/info") => Ok(respond(backend.info())),
        ("POST", "/v1/generate") => {
            parse::<GenerateRequest>(body).map(|r| respond(backend.generate(&r.prompt, &r.params())))
        }
        ("POST", "/v1/score") => {
            parse::<ScoreRequest>(body).map(|r| respond(backend.score_continuation(&r.prompt, &r.continuation)))
        }
        ("POST", "/v1/hidden") => parse::<HiddenRequest>(body).map(|r| respond(backend.final_hidden(&r.prompt))),
        _ => Err((404, error_body(&format!("no route for {method} {path}")))),
    };
    out.unwrap_or_else(|e| e)
}
