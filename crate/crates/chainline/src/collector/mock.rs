//! Minimal JSON-RPC server for tests and demos.
//!
//! Serves `getblockhash`, `getblock` and `getblockcount` from an in-memory
//! chain fixture, speaking JSON-RPC 1.0 envelopes over HTTP like a real
//! node. Optional failure injection returns HTTP 500 on every N-th request
//! to exercise client retry paths.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use base64::Engine;
use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

use crate::blockmodel::RawBlock;
use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, Default)]
pub struct MockRpcOptions {
    /// Bind address; port 0 picks a free port.
    pub bind: Option<String>,
    pub user: Option<String>,
    pub pass: Option<String>,
    /// Fail every N-th request with HTTP 500 (1-based counting).
    pub fail_every: Option<u64>,
}

pub struct MockRpcServer {
    server: Arc<Server>,
    port: u16,
    requests: Arc<AtomicU64>,
    handle: Option<JoinHandle<()>>,
}

struct Fixture {
    by_height: Vec<Value>,
    by_hash: HashMap<String, usize>,
}

fn rpc_error(id: Value, code: i64, message: &str) -> (u16, Value) {
    (
        500,
        json!({"result": null, "error": {"code": code, "message": message}, "id": id}),
    )
}

fn handle_call(fixture: &Fixture, body: &Value) -> (u16, Value) {
    let id = body.get("id").cloned().unwrap_or(Value::Null);
    let method = body.get("method").and_then(Value::as_str).unwrap_or("");
    let params = body
        .get("params")
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();

    match method {
        "getblockcount" => {
            let count = fixture.by_height.len() as u64;
            if count == 0 {
                return rpc_error(id, -1, "empty chain fixture");
            }
            (200, json!({"result": count - 1, "error": null, "id": id}))
        }
        "getblockhash" => {
            let height = params.first().and_then(Value::as_u64);
            match height.and_then(|h| fixture.by_height.get(h as usize)) {
                Some(block) => {
                    let hash = block.get("hash").cloned().unwrap_or(Value::Null);
                    (200, json!({"result": hash, "error": null, "id": id}))
                }
                None => rpc_error(id, -8, "Block height out of range"),
            }
        }
        "getblock" => {
            let hash = params.first().and_then(Value::as_str).unwrap_or("");
            match fixture.by_hash.get(hash) {
                Some(&i) => (
                    200,
                    json!({"result": fixture.by_height[i], "error": null, "id": id}),
                ),
                None => rpc_error(id, -5, "Block not found"),
            }
        }
        other => rpc_error(id, -32601, &format!("Method not found: {other}")),
    }
}

impl MockRpcServer {
    /// Starts the server on a background thread over the given chain
    /// (blocks in any order; they are indexed by height and hash).
    pub fn start(chain: Vec<Value>, options: MockRpcOptions) -> Result<Self> {
        let mut by_height: Vec<(u64, Value)> = Vec::with_capacity(chain.len());
        for block in chain {
            let height = RawBlock::new(&block)?.height()?;
            by_height.push((height, block));
        }
        by_height.sort_by_key(|(h, _)| *h);
        let by_height: Vec<Value> = by_height.into_iter().map(|(_, b)| b).collect();
        let by_hash = by_height
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.get("hash").and_then(Value::as_str).map(|h| (h.to_owned(), i)))
            .collect();
        let fixture = Fixture { by_height, by_hash };

        let expected_auth = options.user.as_ref().map(|user| {
            let pass = options.pass.as_deref().unwrap_or("");
            let token =
                base64::engine::general_purpose::STANDARD.encode(format!("{user}:{pass}"));
            format!("Basic {token}")
        });

        let bind = options.bind.clone().unwrap_or_else(|| "127.0.0.1:0".to_owned());
        let server = Arc::new(
            Server::http(&bind).map_err(|e| Error::Rpc(format!("cannot bind {bind}: {e}")))?,
        );
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| Error::Rpc("mock server has no ip address".into()))?;

        let requests = Arc::new(AtomicU64::new(0));
        let thread_server = Arc::clone(&server);
        let thread_requests = Arc::clone(&requests);
        let fail_every = options.fail_every;

        let handle = std::thread::spawn(move || {
            let json_header: Header =
                Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                    .expect("static header");
            for mut request in thread_server.incoming_requests() {
                let n = thread_requests.fetch_add(1, Ordering::SeqCst) + 1;
                if let Some(every) = fail_every {
                    if n % every == 0 {
                        let _ = request.respond(
                            Response::from_string("injected failure").with_status_code(500),
                        );
                        continue;
                    }
                }
                if let Some(expected) = &expected_auth {
                    let got = request
                        .headers()
                        .iter()
                        .find(|h| h.field.equiv("Authorization"))
                        .map(|h| h.value.as_str().to_owned());
                    if got.as_deref() != Some(expected.as_str()) {
                        let _ = request.respond(
                            Response::from_string("Unauthorized").with_status_code(401),
                        );
                        continue;
                    }
                }
                let mut body = String::new();
                if request.as_reader().read_to_string(&mut body).is_err() {
                    let _ = request
                        .respond(Response::from_string("bad request").with_status_code(400));
                    continue;
                }
                let (status, reply) = match serde_json::from_str::<Value>(&body) {
                    Ok(parsed) => handle_call(&fixture, &parsed),
                    Err(_) => rpc_error(Value::Null, -32700, "Parse error"),
                };
                let data = serde_json::to_vec(&reply).expect("reply serializes");
                let _ = request.respond(
                    Response::from_data(data)
                        .with_status_code(status)
                        .with_header(json_header.clone()),
                );
            }
        });

        Ok(MockRpcServer {
            server,
            port,
            requests,
            handle: Some(handle),
        })
    }

    /// Loads a JSON-lines chain fixture from disk and serves it.
    pub fn start_from_file(path: &std::path::Path, options: MockRpcOptions) -> Result<Self> {
        let reader = jsonl::open_input(Some(path))?;
        let chain: Result<Vec<Value>> = jsonl::json_values(reader, path).collect();
        Self::start(chain?, options)
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn url(&self) -> String {
        format!("http://127.0.0.1:{}/", self.port)
    }

    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    /// Blocks the calling thread until the server is shut down elsewhere.
    pub fn join(mut self) {
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for MockRpcServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}
