//! JSON-lines request log. Lines carry the route template, never the
//! concrete path or query, so identifiers in URLs stay out of the log.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::extract::{MatchedPath, Request, State};
use axum::middleware::Next;
use axum::response::Response;
use serde::Serialize;

use crate::state::AppState;

/// Gas used by a request, attached to its response for logging.
#[derive(Debug, Clone, Copy)]
pub struct GasUsed(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogLine {
    pub ts: u64,
    pub method: String,
    pub route: String,
    pub status: u16,
    pub gas_used: Option<u64>,
}

enum Sink {
    Stdout,
    File(File),
    Memory(Vec<String>),
}

pub struct RequestLog {
    sink: Mutex<Sink>,
}

impl RequestLog {
    pub fn stdout() -> Self {
        Self {
            sink: Mutex::new(Sink::Stdout),
        }
    }

    pub fn memory() -> Self {
        Self {
            sink: Mutex::new(Sink::Memory(Vec::new())),
        }
    }

    pub fn file(path: &Path) -> std::io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            sink: Mutex::new(Sink::File(f)),
        })
    }

    pub fn write(&self, line: &LogLine) {
        let text = serde_json::to_string(line).expect("log line serializes");
        let mut sink = self.sink.lock().expect("request log poisoned");
        let res = match &mut *sink {
            Sink::Stdout => writeln!(std::io::stdout().lock(), "{text}"),
            Sink::File(f) => writeln!(f, "{text}"),
            Sink::Memory(v) => {
                v.push(text);
                Ok(())
            }
        };
        if let Err(e) = res {
            log::warn!("request log write failed: {e}");
        }
    }

    /// Lines kept by a memory log. Empty for other sinks.
    pub fn lines(&self) -> Vec<String> {
        match &*self.sink.lock().expect("request log poisoned") {
            Sink::Memory(v) => v.clone(),
            _ => Vec::new(),
        }
    }
}

pub async fn log_requests(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let method = req.method().to_string();
    let route = req
        .extensions()
        .get::<MatchedPath>()
        .map(|m| m.as_str().to_owned())
        .unwrap_or_else(|| {
            if req.uri().path().starts_with("/app") {
                "/app".to_owned()
            } else {
                "unmatched".to_owned()
            }
        });
    let resp = next.run(req).await;
    let line = LogLine {
        ts: state.now(),
        method,
        route,
        status: resp.status().as_u16(),
        gas_used: resp.extensions().get::<GasUsed>().map(|g| g.0),
    };
    state.request_log.write(&line);
    resp
}
