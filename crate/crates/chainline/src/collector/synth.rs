//! Deterministic synthetic chain generator.
//!
//! Produces structurally valid chains for tests and benchmarks: every block
//! starts with a coinbase transaction, every non-coinbase input spends a
//! previously created unspent output, and amounts balance with a
//! non-negative fee. The same seed always yields byte-identical output.
//!
//! Chains render in two forms from one generated model: `Enriched` (satoshi
//! integer values, addresses everywhere derivable) matching the output of
//! the enrichment stage, and `Raw` (eight-decimal bitcoin values, `pubkey`
//! scripts without an addresses list) matching what an RPC endpoint serves.

use std::io::Write;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Map, Number, Value};

use crate::blockmodel::Satoshi;
use crate::error::{Error, Result};
use crate::jsonl;

const COINBASE_REWARD: u64 = 5_000_000_000;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub blocks: u64,
    pub seed: u64,
    /// Inclusive (min, max) transactions per block, coinbase included.
    pub tx_per_block: (u32, u32),
    /// Inclusive (min, max) inputs per non-coinbase transaction.
    pub inputs_per_tx: (u32, u32),
    /// Inclusive (min, max) outputs per transaction.
    pub outputs_per_tx: (u32, u32),
    /// Probability that an output goes to a never-seen address.
    pub address_churn: f64,
    pub start_time: u64,
    pub block_interval: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            blocks: 10,
            seed: 0,
            tx_per_block: (1, 4),
            inputs_per_tx: (1, 3),
            outputs_per_tx: (1, 3),
            address_churn: 0.5,
            start_time: 1_600_000_000,
            block_interval: 600,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (u32, u32)| lo <= hi;
        if self.blocks == 0 {
            return Err(Error::Config("block count must be positive".into()));
        }
        if !range_ok(self.tx_per_block) || self.tx_per_block.0 < 1 {
            return Err(Error::Config("tx-per-block range must be within 1..".into()));
        }
        if !range_ok(self.inputs_per_tx) || self.inputs_per_tx.0 < 1 {
            return Err(Error::Config("inputs-per-tx range must be within 1..".into()));
        }
        if !range_ok(self.outputs_per_tx) || self.outputs_per_tx.0 < 1 {
            return Err(Error::Config(
                "outputs-per-tx range must not permit transactions without outputs".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.address_churn) {
            return Err(Error::Config("address churn must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptKind {
    PubKeyHash(String),
    PubKey(String),
    Multisig(Vec<String>),
    NullData,
    NonStandard,
}

impl ScriptKind {
    /// Addresses the enrichment stage can derive for this script.
    pub fn addresses(&self) -> Vec<&str> {
        match self {
            ScriptKind::PubKeyHash(a) | ScriptKind::PubKey(a) => vec![a.as_str()],
            ScriptKind::Multisig(list) => list.iter().map(String::as_str).collect(),
            ScriptKind::NullData | ScriptKind::NonStandard => Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogicalOutput {
    pub value: Satoshi,
    pub script: ScriptKind,
}

#[derive(Debug, Clone)]
pub struct LogicalTx {
    pub txid: String,
    /// `None` marks the coinbase input.
    pub inputs: Vec<(String, u64)>,
    pub coinbase: bool,
    pub outputs: Vec<LogicalOutput>,
}

#[derive(Debug, Clone)]
pub struct LogicalBlock {
    pub height: u64,
    pub hash: String,
    pub prev: Option<String>,
    pub time: u64,
    pub txs: Vec<LogicalTx>,
}

#[derive(Debug, Clone)]
pub struct LogicalChain {
    pub blocks: Vec<LogicalBlock>,
}

struct Utxo {
    txid: String,
    vout: u64,
    value: u64,
}

fn hex_string(rng: &mut ChaCha8Rng, bytes: usize) -> String {
    use std::fmt::Write as _;
    let mut s = String::with_capacity(bytes * 2);
    for _ in 0..bytes {
        write!(s, "{:02x}", rng.gen::<u8>()).expect("write to string");
    }
    s
}

fn pick_address(rng: &mut ChaCha8Rng, pool: &mut Vec<String>, churn: f64) -> String {
    if pool.is_empty() || rng.gen_bool(churn) {
        let addr = hex_string(rng, 20);
        pool.push(addr.clone());
        addr
    } else {
        pool[rng.gen_range(0..pool.len())].clone()
    }
}

fn pick_script(rng: &mut ChaCha8Rng, pool: &mut Vec<String>, churn: f64) -> ScriptKind {
    match rng.gen_range(0..100u32) {
        0..=59 => ScriptKind::PubKeyHash(pick_address(rng, pool, churn)),
        60..=79 => ScriptKind::PubKey(pick_address(rng, pool, churn)),
        80..=89 => {
            let a = pick_address(rng, pool, churn);
            let b = pick_address(rng, pool, churn);
            ScriptKind::Multisig(vec![a, b])
        }
        90..=94 => ScriptKind::NullData,
        _ => ScriptKind::NonStandard,
    }
}

/// Splits `total` into `parts` non-negative values summing to `total`.
fn split_value(rng: &mut ChaCha8Rng, total: u64, parts: usize) -> Vec<u64> {
    let mut cuts: Vec<u64> = (0..parts - 1)
        .map(|_| if total == 0 { 0 } else { rng.gen_range(0..=total) })
        .collect();
    cuts.sort_unstable();
    cuts.push(total);
    let mut values = Vec::with_capacity(parts);
    let mut prev = 0;
    for cut in cuts {
        values.push(cut - prev);
        prev = cut;
    }
    values
}

/// Generates the logical chain for a validated spec.
pub fn generate(spec: &SynthSpec) -> Result<LogicalChain> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut address_pool: Vec<String> = Vec::new();
    let mut utxos: Vec<Utxo> = Vec::new();
    let mut blocks = Vec::with_capacity(spec.blocks as usize);
    let mut prev_hash: Option<String> = None;

    for height in 0..spec.blocks {
        let hash = hex_string(&mut rng, 32);
        let n_tx = rng.gen_range(spec.tx_per_block.0..=spec.tx_per_block.1);
        let mut txs = Vec::with_capacity(n_tx as usize);

        for tx_pos in 0..n_tx {
            let txid = hex_string(&mut rng, 32);
            let coinbase = tx_pos == 0;

            let (inputs, in_total) = if coinbase {
                (Vec::new(), COINBASE_REWARD)
            } else {
                if utxos.is_empty() {
                    continue;
                }
                let want = rng.gen_range(spec.inputs_per_tx.0..=spec.inputs_per_tx.1) as usize;
                let k = want.min(utxos.len());
                let mut picked = Vec::with_capacity(k);
                let mut total = 0u64;
                for _ in 0..k {
                    let utxo = utxos.swap_remove(rng.gen_range(0..utxos.len()));
                    total += utxo.value;
                    picked.push((utxo.txid, utxo.vout));
                }
                (picked, total)
            };

            let fee = if coinbase || in_total == 0 {
                0
            } else {
                rng.gen_range(0..=in_total / 20)
            };
            let out_total = in_total - fee;

            let n_out = rng.gen_range(spec.outputs_per_tx.0..=spec.outputs_per_tx.1) as usize;
            let values = split_value(&mut rng, out_total, n_out);
            let outputs: Vec<LogicalOutput> = values
                .into_iter()
                .map(|value| {
                    let script = pick_script(&mut rng, &mut address_pool, spec.address_churn);
                    // OP_RETURN outputs burn nothing here; keep value on
                    // spendable scripts so the ledger stays balanced.
                    LogicalOutput {
                        value: Satoshi(value),
                        script,
                    }
                })
                .collect();

            for (vout, output) in outputs.iter().enumerate() {
                if !matches!(output.script, ScriptKind::NullData) {
                    utxos.push(Utxo {
                        txid: txid.clone(),
                        vout: vout as u64,
                        value: output.value.0,
                    });
                }
            }

            txs.push(LogicalTx {
                txid,
                inputs,
                coinbase,
                outputs,
            });
        }

        blocks.push(LogicalBlock {
            height,
            hash: hash.clone(),
            prev: prev_hash.take(),
            time: spec.start_time + height * spec.block_interval,
            txs,
        });
        prev_hash = Some(hash);
    }

    Ok(LogicalChain { blocks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// RPC form: decimal bitcoin values, no derived address lists.
    Raw,
    /// Post-enrichment form: satoshi integers, addresses present.
    Enriched,
}

fn render_script(script: &ScriptKind, mode: RenderMode) -> Value {
    let mut map = Map::new();
    let (type_tag, asm, addresses): (&str, String, Vec<&str>) = match script {
        ScriptKind::PubKeyHash(addr) => (
            "pubkeyhash",
            format!("OP_DUP OP_HASH160 {addr} OP_EQUALVERIFY OP_CHECKSIG"),
            vec![addr.as_str()],
        ),
        ScriptKind::PubKey(addr) => ("pubkey", format!("{addr} OP_CHECKSIG"), vec![addr.as_str()]),
        ScriptKind::Multisig(list) => (
            "multisig",
            format!("1 {} 2 OP_CHECKMULTISIG", list.join(" ")),
            list.iter().map(String::as_str).collect(),
        ),
        ScriptKind::NullData => ("nulldata", "OP_RETURN 6a".to_owned(), Vec::new()),
        ScriptKind::NonStandard => ("nonstandard", String::new(), Vec::new()),
    };
    map.insert("type".into(), type_tag.into());
    map.insert("asm".into(), asm.into());
    // Raw pubkey outputs carry no addresses list; enrichment derives it.
    let emit_addresses = match (script, mode) {
        (ScriptKind::PubKey(_), RenderMode::Raw) => false,
        _ => !addresses.is_empty(),
    };
    if emit_addresses {
        map.insert(
            "addresses".into(),
            Value::Array(addresses.into_iter().map(Value::from).collect()),
        );
    }
    Value::Object(map)
}

fn render_value(sat: Satoshi, mode: RenderMode) -> Value {
    match mode {
        RenderMode::Raw => {
            let text = sat.to_btc_string();
            Value::Number(Number::from_str(&text).expect("formatter emits valid numbers"))
        }
        RenderMode::Enriched => Value::from(sat.0),
    }
}

fn render_block(block: &LogicalBlock, next_hash: Option<&str>, mode: RenderMode) -> Value {
    let mut map = Map::new();
    map.insert("height".into(), Value::from(block.height));
    map.insert("hash".into(), block.hash.clone().into());
    if let Some(prev) = &block.prev {
        map.insert("previousblockhash".into(), prev.clone().into());
    }
    if let Some(next) = next_hash {
        map.insert("nextblockhash".into(), next.into());
    }
    map.insert("time".into(), Value::from(block.time));

    let txs: Vec<Value> = block
        .txs
        .iter()
        .map(|tx| {
            let vin: Vec<Value> = if tx.coinbase {
                vec![json!({"coinbase": "04ffff001d", "sequence": 4294967295u64})]
            } else {
                tx.inputs
                    .iter()
                    .map(|(txid, vout)| {
                        json!({"txid": txid, "vout": vout, "sequence": 4294967295u64})
                    })
                    .collect()
            };
            let vout: Vec<Value> = tx
                .outputs
                .iter()
                .enumerate()
                .map(|(n, out)| {
                    let mut m = Map::new();
                    m.insert("value".into(), render_value(out.value, mode));
                    m.insert("n".into(), Value::from(n as u64));
                    m.insert("scriptPubKey".into(), render_script(&out.script, mode));
                    Value::Object(m)
                })
                .collect();
            json!({"txid": tx.txid, "vin": vin, "vout": vout})
        })
        .collect();
    map.insert("tx".into(), Value::Array(txs));
    Value::Object(map)
}

/// Renders a logical chain as JSON-lines, chronological order.
pub fn render(chain: &LogicalChain, mode: RenderMode, mut out: impl Write) -> Result<()> {
    for (i, block) in chain.blocks.iter().enumerate() {
        let next_hash = chain.blocks.get(i + 1).map(|b| b.hash.as_str());
        let value = render_block(block, next_hash, mode);
        jsonl::write_json_line(&mut out, &value)?;
    }
    out.flush().map_err(|e| Error::io("<synth output>", e))?;
    Ok(())
}

/// Generates and renders in one call.
pub fn synth_chain(spec: &SynthSpec, mode: RenderMode, out: impl Write) -> Result<LogicalChain> {
    let chain = generate(spec)?;
    render(&chain, mode, out)?;
    Ok(chain)
}

/// Renders the chain to parsed block values (test convenience).
pub fn to_values(chain: &LogicalChain, mode: RenderMode) -> Vec<Value> {
    chain
        .blocks
        .iter()
        .enumerate()
        .map(|(i, block)| {
            let next_hash = chain.blocks.get(i + 1).map(|b| b.hash.as_str());
            render_block(block, next_hash, mode)
        })
        .collect()
}
