//! JSON-RPC client and backward chain fetch.
//!
//! The fetch walks the chain tip-to-genesis through each block's
//! `previousblockhash`, so only one `getblockhash` call is ever issued.
//! Progress is checkpointed beside the output file after every block,
//! allowing an aborted run to resume without re-fetching.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::jsonl;

/// Connection parameters for a bitcoin-style JSON-RPC endpoint.
#[derive(Debug, Clone)]
pub struct RpcEndpoint {
    pub url: String,
    pub user: Option<String>,
    pub pass: Option<String>,
    pub timeout: Duration,
    /// Number of retries after the first attempt of each call.
    pub retries: u32,
}

impl RpcEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        RpcEndpoint {
            url: url.into(),
            user: None,
            pass: None,
            timeout: Duration::from_secs(30),
            retries: 3,
        }
    }
}

pub struct RpcClient {
    agent: ureq::Agent,
    endpoint: RpcEndpoint,
    auth_header: Option<String>,
}

impl RpcClient {
    pub fn new(endpoint: RpcEndpoint) -> Result<Self> {
        if endpoint.timeout.is_zero() {
            return Err(Error::Config("rpc timeout must be positive".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let auth_header = endpoint.user.as_ref().map(|user| {
            let pass = endpoint.pass.as_deref().unwrap_or("");
            let token = base64::engine::general_purpose::STANDARD
                .encode(format!("{user}:{pass}"));
            format!("Basic {token}")
        });
        Ok(RpcClient {
            agent,
            endpoint,
            auth_header,
        })
    }

    /// Issues one JSON-RPC call, retrying transient failures with backoff
    /// until the endpoint's retry budget is exhausted.
    fn call(&self, method: &str, params: Value) -> Result<Value> {
        let body = json!({
            "jsonrpc": "1.0",
            "id": "chainline",
            "method": method,
            "params": params,
        });
        let attempts = self.endpoint.retries + 1;
        let mut last_error = String::new();

        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = Duration::from_millis(100u64 << (attempt - 1).min(5));
                std::thread::sleep(backoff);
                log::warn!("rpc {method}: retry {attempt}/{}", self.endpoint.retries);
            }
            let mut request = self.agent.post(&self.endpoint.url);
            if let Some(auth) = &self.auth_header {
                request = request.header("Authorization", auth);
            }
            match request.send_json(&body) {
                Err(e) => last_error = format!("transport: {e}"),
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    let parsed: std::result::Result<Value, _> = response.body_mut().read_json();
                    match parsed {
                        Err(e) if status == 200 => last_error = format!("bad response body: {e}"),
                        Err(_) => last_error = format!("http status {status}"),
                        Ok(reply) => {
                            let error = reply.get("error").cloned().unwrap_or(Value::Null);
                            if error.is_null() {
                                return reply
                                    .get("result")
                                    .cloned()
                                    .ok_or_else(|| {
                                        Error::Rpc(format!("{method}: reply has no result"))
                                    });
                            }
                            last_error = format!("http status {status}, rpc error {error}");
                        }
                    }
                }
            }
        }
        Err(Error::Rpc(format!(
            "{method} failed after {attempts} attempts: {last_error}"
        )))
    }

    pub fn get_block_hash(&self, height: u64) -> Result<String> {
        match self.call("getblockhash", json!([height]))? {
            Value::String(hash) => Ok(hash),
            other => Err(Error::Rpc(format!(
                "getblockhash returned non-string result {other}"
            ))),
        }
    }

    /// Fetches a block with fully decoded transactions (verbosity 2).
    pub fn get_block(&self, hash: &str) -> Result<Value> {
        self.call("getblock", json!([hash, 2]))
    }

    pub fn get_block_count(&self) -> Result<u64> {
        self.call("getblockcount", json!([]))?
            .as_u64()
            .ok_or_else(|| Error::Rpc("getblockcount returned a non-integer".into()))
    }
}

/// Resume checkpoint written beside the output file after every block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub tip: u64,
    pub last_height_written: u64,
    /// `previousblockhash` of the last written block; the next block to fetch.
    pub next_hash: Option<String>,
}

impl Checkpoint {
    pub fn path_for(out: &Path) -> PathBuf {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".checkpoint");
        out.with_file_name(name)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let data = serde_json::to_vec(self).map_err(|e| Error::json("checkpoint", e))?;
        std::fs::write(path, data).map_err(|e| Error::io(path, e))
    }

    fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&data).map_err(|e| Error::json("checkpoint", e))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FetchStats {
    pub blocks_written: u64,
    pub resumed_at: Option<u64>,
}

/// Collects blocks `tip..=0` into `out`, newest first, one JSON object per
/// line. `tip` defaults to the endpoint's reported block count. With
/// `resume`, a checkpoint left by an aborted run is honored and the file is
/// extended in place.
pub fn fetch_chain_backward(
    client: &RpcClient,
    tip: Option<u64>,
    out: &Path,
    resume: bool,
) -> Result<FetchStats> {
    let checkpoint_path = Checkpoint::path_for(out);
    let mut stats = FetchStats::default();

    let (tip, mut next_height, mut next_hash, file) = if resume && checkpoint_path.exists() {
        let cp = Checkpoint::load(&checkpoint_path)?;
        if cp.last_height_written == 0 {
            return Err(Error::Config(format!(
                "{} is already complete; nothing to resume",
                out.display()
            )));
        }
        let hash = cp.next_hash.clone().ok_or_else(|| {
            Error::Integrity("checkpoint lacks the next block hash".into())
        })?;
        log::info!(
            "resuming collection of {} below height {}",
            out.display(),
            cp.last_height_written
        );
        stats.resumed_at = Some(cp.last_height_written);
        let file = OpenOptions::new()
            .append(true)
            .open(out)
            .map_err(|e| Error::io(out, e))?;
        (cp.tip, cp.last_height_written - 1, hash, file)
    } else {
        let tip = match tip {
            Some(t) => t,
            None => client.get_block_count()?,
        };
        let hash = client.get_block_hash(tip)?;
        let file = File::create(out).map_err(|e| Error::io(out, e))?;
        (tip, tip, hash, file)
    };

    let mut writer = BufWriter::new(file);
    loop {
        let block = client.get_block(&next_hash)?;
        let got_hash = block.get("hash").and_then(Value::as_str).unwrap_or("");
        if got_hash != next_hash {
            return Err(Error::Integrity(format!(
                "requested block {next_hash} but endpoint returned hash {got_hash}"
            )));
        }
        let got_height = block.get("height").and_then(Value::as_u64);
        if got_height != Some(next_height) {
            return Err(Error::Integrity(format!(
                "block {next_hash} reports height {got_height:?}, expected {next_height}"
            )));
        }
        let prev = block
            .get("previousblockhash")
            .and_then(Value::as_str)
            .map(str::to_owned);
        if next_height > 0 && prev.is_none() {
            return Err(Error::Integrity(format!(
                "block {next_hash} at height {next_height} lacks previousblockhash"
            )));
        }

        jsonl::write_json_line(&mut writer, &block)?;
        writer.flush().map_err(|e| Error::io(out, e))?;
        stats.blocks_written += 1;

        Checkpoint {
            tip,
            last_height_written: next_height,
            next_hash: prev.clone(),
        }
        .save(&checkpoint_path)?;

        if next_height == 0 {
            break;
        }
        next_height -= 1;
        next_hash = prev.expect("checked above");
    }

    std::fs::remove_file(&checkpoint_path).map_err(|e| Error::io(&checkpoint_path, e))?;
    Ok(stats)
}
