//! In-process HTTP server speaking the `/v1/score` protocol, backed by a
//! planted oracle. It keeps its own request counters so tests can check the
//! client-side ledger against an independent count.
//!
//! `GET /v1/stats` returns the counters as JSON.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Response, Server};

use promptopt_core::oracle::Oracle;
use promptopt_core::planted::PlantedOracle;

use crate::error::{Error, Result};
use crate::remote::ScoreResponse;

#[derive(Clone, Debug, Default)]
pub struct MockOptions {
    /// Answer every k-th scoring request with 429.
    pub rate_limit_every: Option<u64>,
    /// Require this bearer token.
    pub auth_token: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockStats {
    /// Scoring requests answered with 200.
    pub billed_requests: u64,
    /// Inputs inside those requests.
    pub billed_inputs: u64,
    pub rate_limited: u64,
    pub rejected: u64,
}

#[derive(Default)]
struct Counters {
    seen: AtomicU64,
    billed_requests: AtomicU64,
    billed_inputs: AtomicU64,
    rate_limited: AtomicU64,
    rejected: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> MockStats {
        MockStats {
            billed_requests: self.billed_requests.load(Ordering::SeqCst),
            billed_inputs: self.billed_inputs.load(Ordering::SeqCst),
            rate_limited: self.rate_limited.load(Ordering::SeqCst),
            rejected: self.rejected.load(Ordering::SeqCst),
        }
    }
}

#[derive(Deserialize)]
struct ScoreRequest {
    inputs: Vec<String>,
    candidates: Vec<Vec<String>>,
}

pub struct MockServer {
    server: Arc<Server>,
    counters: Arc<Counters>,
    handle: Option<JoinHandle<()>>,
    url: String,
}

impl MockServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves on a
    /// background thread.
    pub fn start(oracle: PlantedOracle, addr: &str, options: MockOptions) -> Result<Self> {
        let server = Server::http(addr).map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
        let url = match server.server_addr().to_ip() {
            Some(a) => format!("http://{a}"),
            None => return Err(Error::Config(format!("{addr} is not an IP address"))),
        };
        let server = Arc::new(server);
        let counters = Arc::new(Counters::default());
        let handle = {
            let server = Arc::clone(&server);
            let counters = Arc::clone(&counters);
            thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle(request, &oracle, &options, &counters);
                }
            })
        };
        Ok(MockServer { server, counters, handle: Some(handle), url })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn stats(&self) -> MockStats {
        self.counters.snapshot()
    }

    /// Blocks until the serving thread exits.
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) -> MockStats {
        self.stop();
        self.counters.snapshot()
    }

    fn stop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn json_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_string(body).with_status_code(status).with_header(header)
}

fn error_body(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

fn handle(mut request: tiny_http::Request, oracle: &PlantedOracle, options: &MockOptions, counters: &Counters) {
    let response = route(&mut request, oracle, options, counters);
    let _ = request.respond(response);
}

fn route(
    request: &mut tiny_http::Request,
    oracle: &PlantedOracle,
    options: &MockOptions,
    counters: &Counters,
) -> Response<std::io::Cursor<Vec<u8>>> {
    match (request.method(), request.url()) {
        (Method::Get, "/v1/stats") => {
            json_response(200, serde_json::to_string(&counters.snapshot()).expect("stats serialize"))
        }
        (Method::Post, "/v1/score") => {
            if let Some(token) = &options.auth_token {
                let expected = format!("Bearer {token}");
                let ok = request
                    .headers()
                    .iter()
                    .any(|h| h.field.equiv("Authorization") && h.value.as_str() == expected);
                if !ok {
                    counters.rejected.fetch_add(1, Ordering::SeqCst);
                    return json_response(401, error_body("missing or wrong bearer token"));
                }
            }
            let n = counters.seen.fetch_add(1, Ordering::SeqCst) + 1;
            if matches!(options.rate_limit_every, Some(k) if k > 0 && n.is_multiple_of(k)) {
                counters.rate_limited.fetch_add(1, Ordering::SeqCst);
                return json_response(429, error_body("rate limited"));
            }
            let mut body = String::new();
            if request.as_reader().read_to_string(&mut body).is_err() {
                counters.rejected.fetch_add(1, Ordering::SeqCst);
                return json_response(400, error_body("unreadable body"));
            }
            let parsed: ScoreRequest = match serde_json::from_str(&body) {
                Ok(p) => p,
                Err(e) => {
                    counters.rejected.fetch_add(1, Ordering::SeqCst);
                    return json_response(400, error_body(&e.to_string()));
                }
            };
            match oracle.score(&parsed.inputs, &parsed.candidates) {
                Ok(scores) => {
                    counters.billed_requests.fetch_add(1, Ordering::SeqCst);
                    counters.billed_inputs.fetch_add(parsed.inputs.len() as u64, Ordering::SeqCst);
                    json_response(200, serde_json::to_string(&ScoreResponse { scores }).expect("scores serialize"))
                }
                Err(e) => {
                    counters.rejected.fetch_add(1, Ordering::SeqCst);
                    json_response(400, error_body(&e.to_string()))
                }
            }
        }
        _ => json_response(404, error_body("not found")),
    }
}
