//! Chain acquisition and normalization.
//!
//! The collector obtains the chain as JSON-lines (from an RPC endpoint via
//! [`rpc::fetch_chain_backward`], or synthetically via [`synth`]), reverses
//! the backward-collected file into chronological order with bounded memory,
//! and enriches blocks in place: derivable addresses get an explicit
//! `addresses` field and every output value becomes an exact satoshi
//! integer.

pub mod mock;
pub mod rpc;
pub mod synth;

use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::blockmodel::{btc_to_satoshi, extract_addresses, ScriptPubKey};
use crate::error::{Error, Result};
use crate::jsonl;

/// Enriches one parsed block in place.
///
/// Output values holding a decimal-point (or exponent) token are bitcoin
/// amounts from RPC and are rewritten as satoshi integers; plain-integer
/// tokens are already satoshis and are left untouched, which makes
/// enrichment idempotent. Addresses are added only where derivable and not
/// already present. All unrelated fields are preserved; only the compact
/// re-serialization normalizes whitespace.
pub fn enrich_value(block: &mut Value) -> Result<()> {
    let height = block.get("height").and_then(Value::as_u64);
    let ctx_block = move || match height {
        Some(h) => format!("block {h}"),
        None => "block <no height>".to_owned(),
    };

    let txs = block
        .get_mut("tx")
        .and_then(Value::as_array_mut)
        .ok_or_else(|| Error::Structure(format!("{}: missing tx array", ctx_block())))?;

    for tx in txs.iter_mut() {
        let txid = tx
            .get("txid")
            .and_then(Value::as_str)
            .unwrap_or("<no txid>")
            .to_owned();
        let vouts = tx
            .get_mut("vout")
            .and_then(Value::as_array_mut)
            .ok_or_else(|| {
                Error::Structure(format!("{} tx {txid}: missing vout array", ctx_block()))
            })?;

        for (pos, out) in vouts.iter_mut().enumerate() {
            let ctx = || format!("{} tx {txid} output {pos}", ctx_block());
            let out_map = out
                .as_object_mut()
                .ok_or_else(|| Error::Structure(format!("{}: output is not an object", ctx())))?;

            // Amount normalization.
            let token = match out_map.get("value") {
                Some(Value::Number(n)) => n.as_str().to_owned(),
                Some(_) => {
                    return Err(Error::Structure(format!("{}: value is not a number", ctx())))
                }
                None => return Err(Error::Structure(format!("{}: missing value field", ctx()))),
            };
            if token.contains(['.', 'e', 'E']) {
                let sat = btc_to_satoshi(&token)
                    .map_err(|e| Error::Parse(format!("{}: {e}", ctx())))?;
                out_map.insert("value".to_owned(), Value::from(sat.0));
            } else if token.parse::<u64>().is_err() {
                return Err(Error::Parse(format!(
                    "{}: value {token:?} is neither a decimal bitcoin amount \
                     nor a satoshi integer",
                    ctx()
                )));
            }

            // Address enrichment.
            let spk_value = out_map.get_mut("scriptPubKey").ok_or_else(|| {
                Error::Structure(format!("{}: missing scriptPubKey", ctx()))
            })?;
            let derived = {
                let spk = ScriptPubKey::new(spk_value)
                    .map_err(|e| Error::Structure(format!("{}: {e}", ctx())))?;
                if spk.addresses()?.is_some() {
                    None
                } else {
                    let addrs = extract_addresses(&spk)
                        .map_err(|e| Error::Structure(format!("{}: {e}", ctx())))?;
                    (!addrs.is_empty()).then_some(addrs)
                }
            };
            if let Some(addrs) = derived {
                let spk_map = spk_value.as_object_mut().expect("validated as object");
                spk_map.insert(
                    "addresses".to_owned(),
                    Value::Array(addrs.into_iter().map(Value::from).collect()),
                );
            }
        }
    }
    Ok(())
}

/// Streaming form of [`enrich_value`]: JSON-lines in, JSON-lines out.
pub fn enrich_stream(input: impl BufRead, mut out: impl Write) -> Result<u64> {
    let mut blocks = 0u64;
    for value in jsonl::json_values(input, "<enrich input>") {
        let mut block = value?;
        enrich_value(&mut block)?;
        jsonl::write_json_line(&mut out, &block)?;
        blocks += 1;
    }
    out.flush().map_err(|e| Error::io("<enrich output>", e))?;
    Ok(blocks)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReverseStats {
    pub lines: u64,
    pub spill_segments: u64,
}

/// Reverses the line order of a file using at most `memory_budget` bytes of
/// buffered lines, spilling fixed segments to `tmp_dir` (the output's
/// directory by default). Lines are copied byte-identically.
pub fn reverse_blockfile(
    input: &Path,
    output: &Path,
    memory_budget: usize,
    tmp_dir: Option<&Path>,
) -> Result<ReverseStats> {
    let reader = jsonl::open_input(Some(input))?;

    let spill_parent: PathBuf = match tmp_dir {
        Some(d) => d.to_path_buf(),
        None => output.parent().map(Path::to_path_buf).unwrap_or_else(|| ".".into()),
    };
    let spill_dir = tempfile::Builder::new()
        .prefix("chainline-reverse-")
        .tempdir_in(&spill_parent)
        .map_err(|e| Error::io(&spill_parent, e))?;

    let mut stats = ReverseStats::default();
    let mut segments: Vec<PathBuf> = Vec::new();
    let mut buffer: Vec<String> = Vec::new();
    let mut buffered_bytes = 0usize;

    let spill_err = |dir: &Path, segments: &[PathBuf], e: std::io::Error| Error::Spill {
        dir: dir.to_path_buf(),
        detail: e.to_string(),
        runs: segments.to_vec(),
    };

    let flush_segment =
        |buffer: &mut Vec<String>, segments: &mut Vec<PathBuf>| -> Result<()> {
            let path = spill_dir.path().join(format!("segment-{:06}", segments.len()));
            let file = File::create(&path).map_err(|e| spill_err(spill_dir.path(), segments, e))?;
            let mut w = BufWriter::new(file);
            for line in buffer.iter().rev() {
                w.write_all(line.as_bytes())
                    .and_then(|_| w.write_all(b"\n"))
                    .map_err(|e| spill_err(spill_dir.path(), segments, e))?;
            }
            w.flush().map_err(|e| spill_err(spill_dir.path(), segments, e))?;
            segments.push(path);
            buffer.clear();
            Ok(())
        };

    for item in jsonl::Lines::new(reader, input) {
        let (_, line) = item?;
        buffered_bytes += line.len() + 1;
        buffer.push(line);
        stats.lines += 1;
        if buffered_bytes > memory_budget && buffer.len() > 1 {
            flush_segment(&mut buffer, &mut segments)?;
            buffered_bytes = 0;
        }
    }

    let mut writer = BufWriter::new(File::create(output).map_err(|e| Error::io(output, e))?);
    for line in buffer.iter().rev() {
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .map_err(|e| Error::io(output, e))?;
    }
    drop(buffer);
    for segment in segments.iter().rev() {
        let mut seg_reader = File::open(segment).map_err(|e| Error::io(segment, e))?;
        std::io::copy(&mut seg_reader, &mut writer).map_err(|e| Error::io(output, e))?;
    }
    writer.flush().map_err(|e| Error::io(output, e))?;

    stats.spill_segments = segments.len() as u64;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::golden;
    use std::io::Cursor;

    #[test]
    fn enrich_derives_pubkey_address_and_satoshi_values() {
        let mut block: Value = serde_json::from_str(
            r#"{"height":0,"hash":"h0","time":1,"tx":[{"txid":"X","vin":[{"coinbase":"00"}],"vout":[{"value":2.00000000,"n":0,"scriptPubKey":{"type":"pubkey","asm":"c"}}]}]}"#,
        )
        .unwrap();
        enrich_value(&mut block).unwrap();
        let out = &block["tx"][0]["vout"][0];
        assert_eq!(out["value"], Value::from(200_000_000u64));
        assert_eq!(out["scriptPubKey"]["addresses"], serde_json::json!(["c"]));
    }

    #[test]
    fn enrich_leaves_nulldata_alone() {
        let mut block: Value = serde_json::from_str(
            r#"{"height":0,"hash":"h0","time":1,"tx":[{"txid":"X","vin":[],"vout":[{"value":0.00000000,"n":0,"scriptPubKey":{"type":"nulldata","asm":"OP_RETURN"}}]}]}"#,
        )
        .unwrap();
        enrich_value(&mut block).unwrap();
        let spk = block["tx"][0]["vout"][0]["scriptPubKey"].as_object().unwrap();
        assert!(!spk.contains_key("addresses"));
        assert_eq!(block["tx"][0]["vout"][0]["value"], Value::from(0u64));
    }

    #[test]
    fn enrich_is_idempotent_on_the_golden_chain() {
        let mut once = Vec::new();
        enrich_stream(Cursor::new(golden::raw_jsonl()), &mut once).unwrap();
        let mut twice = Vec::new();
        enrich_stream(Cursor::new(once.clone()), &mut twice).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn enrich_reports_context_on_bad_amounts() {
        let mut block: Value = serde_json::from_str(
            r#"{"height":7,"hash":"h","time":1,"tx":[{"txid":"BAD","vin":[],"vout":[{"value":1.123456789,"n":0,"scriptPubKey":{"type":"pubkey","asm":"x"}}]}]}"#,
        )
        .unwrap();
        let err = enrich_value(&mut block).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("block 7") && msg.contains("BAD"), "got {msg}");
    }

    fn write_lines(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        path
    }

    #[test]
    fn reverse_small_files() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_lines(dir.path(), "in.jsonl", &["{\"a\":2}", "{\"a\":1}", "{\"a\":0}"]);
        let output = dir.path().join("out.jsonl");
        let stats = reverse_blockfile(&input, &output, 1 << 20, None).unwrap();
        assert_eq!(stats.lines, 3);
        assert_eq!(
            std::fs::read_to_string(&output).unwrap(),
            "{\"a\":0}\n{\"a\":1}\n{\"a\":2}\n"
        );

        let single = write_lines(dir.path(), "one.jsonl", &["{\"x\":1}"]);
        let single_out = dir.path().join("one-out.jsonl");
        reverse_blockfile(&single, &single_out, 1 << 20, None).unwrap();
        assert_eq!(std::fs::read_to_string(&single_out).unwrap(), "{\"x\":1}\n");
    }

    #[test]
    fn reverse_with_tiny_budget_matches_in_memory_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<String> = (0..10_000).map(|i| format!("{{\"n\":{i}}}")).collect();
        let input = dir.path().join("big.jsonl");
        std::fs::write(&input, lines.join("\n") + "\n").unwrap();
        let output = dir.path().join("big-rev.jsonl");

        let stats = reverse_blockfile(&input, &output, 4096, None).unwrap();
        assert!(stats.spill_segments >= 8, "expected spills, got {stats:?}");

        let expected: String = lines.iter().rev().map(|l| format!("{l}\n")).collect();
        assert_eq!(std::fs::read_to_string(&output).unwrap(), expected);
    }

    #[test]
    fn double_reverse_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_lines(dir.path(), "in.jsonl", &["x", "y", "z", "w"]);
        let mid = dir.path().join("mid");
        let back = dir.path().join("back");
        reverse_blockfile(&input, &mid, 2, None).unwrap();
        reverse_blockfile(&mid, &back, 2, None).unwrap();
        assert_eq!(
            std::fs::read_to_string(&input).unwrap(),
            std::fs::read_to_string(&back).unwrap()
        );
    }
}
