//! Canonical three-block test chain.
//!
//! A tiny chain exercising every structural case the pipeline handles:
//! a coinbase, same-block and cross-block spends, multi-address outputs,
//! address reuse, and both explicit and asm-derived addresses. The expected
//! intermediate listings of the indexing steps and the distilled records
//! are frozen here; every pipeline stage is checked against them.
//!
//! Identifiers are single letters (capitals for transactions, lower case
//! for addresses) so the tuple listings stay readable. Amounts are chosen
//! so every transaction has fee zero.

use serde_json::Value;

use crate::collector::enrich_value;
use crate::jsonl;

pub const TIMES: [u64; 3] = [1610000000, 1610000600, 1610001200];

/// RPC-shaped chain: decimal bitcoin values, pubkey outputs without an
/// addresses list. Chronological order, one block per line.
pub fn raw_jsonl() -> String {
    let lines = [
        r#"{"height":0,"hash":"h0","nextblockhash":"h1","time":1610000000,"merkleroot":"m0","size":275,"tx":[{"txid":"A","version":1,"locktime":0,"vin":[{"coinbase":"044c86041b","sequence":4294967295}],"vout":[{"value":0.00000006,"n":0,"scriptPubKey":{"type":"pubkeyhash","asm":"?","addresses":["b"]}},{"value":0.00000001,"n":1,"scriptPubKey":{"type":"pubkey","asm":"f"}}]},{"txid":"D","version":1,"locktime":0,"vin":[{"txid":"A","vout":0,"sequence":4294967295}],"vout":[{"value":0.00000005,"n":0,"scriptPubKey":{"type":"pubkeyhash","asm":"?","addresses":["b"]}},{"value":0.00000001,"n":1,"scriptPubKey":{"type":"pubkey","asm":"d"}}]}]}"#,
        r#"{"height":1,"hash":"h1","previousblockhash":"h0","nextblockhash":"h2","time":1610000600,"merkleroot":"m1","size":190,"tx":[{"txid":"C","version":1,"locktime":0,"vin":[{"txid":"A","vout":1,"sequence":4294967295},{"txid":"D","vout":1,"sequence":4294967295}],"vout":[{"value":0.00000002,"n":0,"scriptPubKey":{"type":"pubkey","asm":"f"}}]}]}"#,
        r#"{"height":2,"hash":"h2","previousblockhash":"h1","nextblockhash":"h3","time":1610001200,"merkleroot":"m2","size":285,"tx":[{"txid":"B","version":1,"locktime":0,"vin":[{"txid":"C","vout":0,"sequence":4294967295},{"txid":"D","vout":0,"sequence":4294967295}],"vout":[{"value":0.00000002,"n":0,"scriptPubKey":{"type":"pubkeyhash","asm":"?","addresses":["a","c"]}},{"value":0.00000005,"n":1,"scriptPubKey":{"type":"pubkey","asm":"c"}}]},{"txid":"E","version":1,"locktime":0,"vin":[{"txid":"B","vout":1,"sequence":4294967295}],"vout":[{"value":0.00000003,"n":0,"scriptPubKey":{"type":"pubkey","asm":"f"}},{"value":0.00000002,"n":1,"scriptPubKey":{"type":"pubkey","asm":"e"}}]}]}"#,
    ];
    lines.join("\n") + "\n"
}

pub fn raw_chain() -> Vec<Value> {
    raw_jsonl()
        .lines()
        .map(|l| serde_json::from_str(l).expect("golden fixture parses"))
        .collect()
}

/// The chain after enrichment: satoshi integer values, addresses present
/// wherever derivable.
pub fn enriched_chain() -> Vec<Value> {
    let mut chain = raw_chain();
    for block in &mut chain {
        enrich_value(block).expect("golden fixture enriches");
    }
    chain
}

pub fn enriched_jsonl() -> String {
    let mut out = Vec::new();
    for block in enriched_chain() {
        jsonl::write_json_line(&mut out, &block).expect("golden fixture serializes");
    }
    String::from_utf8(out).expect("json is utf-8")
}

/// Strips the namespace tag from the identifier field (field 1) of a tuple
/// line, recovering the untagged listing form.
pub fn strip_tuple_tag(line: &str) -> String {
    strip_tag_at(line, 1)
}

/// Strips the namespace tag from field `field` (0-based) of a
/// space-delimited line.
pub fn strip_tag_at(line: &str, field: usize) -> String {
    line.split(' ')
        .enumerate()
        .map(|(i, part)| {
            if i == field {
                crate::blockmodel::NativeId::strip_tag(part)
            } else {
                part
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Step-1 occurrence tuples: `rank native-id [index]`, 36 lines.
pub const STEP1_TUPLES: [&str; 36] = [
    "0 A 0", "1 A,0 0", "2 b", "3 A,1 1", "4 f", // transaction A
    "5 D 1", "6 A", "7 A,0", "8 D,0 2", "9 b", "10 D,1 3", "11 d", // transaction D
    "12 C 2", "13 A", "14 A,1", "15 D", "16 D,1", "17 C,0 4", "18 f", // transaction C
    "19 B 3", "20 C", "21 C,0", "22 D", "23 D,0", "24 B,0 5", "25 a", "26 c", "27 B,1 6",
    "28 c", // transaction B
    "29 E 4", "30 B", "31 B,1", "32 E,0 7", "33 f", "34 E,1 8", "35 e", // transaction E
];

/// Step-2 address occurrence list: `address address-rank`.
pub const STEP2_OCCURRENCES: [&str; 10] = [
    "b 0", "f 1", "b 2", "d 3", "f 4", "a 5", "c 6", "c 7", "f 8", "e 9",
];

/// Step-2 after sorting by address and keeping the first per address.
pub const STEP2_FIRST_PER_ADDRESS: [&str; 6] =
    ["a 5", "b 0", "c 6", "d 3", "e 9", "f 1"];

/// Step-2 distinct addresses ordered by first-occurrence rank.
pub const STEP2_BY_RANK: [&str; 6] = ["b 0", "f 1", "d 3", "a 5", "c 6", "e 9"];

/// Step-2 output triplets: `-1 address index`.
pub const STEP2_TRIPLETS: [&str; 6] = [
    "-1 b 0", "-1 f 1", "-1 d 2", "-1 a 3", "-1 c 4", "-1 e 5",
];

/// Step-3 grouped tuples (42 lines). Groups must be contiguous with the
/// indexed tuple first; the order of groups relative to each other depends
/// on the collation and is compared content-wise, not line-wise.
pub const STEP3_GROUPED: [&str; 42] = [
    "-1 a 3", "25 a", //
    "0 A 0", "6 A", "13 A", //
    "1 A,0 0", "7 A,0", //
    "3 A,1 1", "14 A,1", //
    "-1 b 0", "2 b", "9 b", //
    "19 B 3", "30 B", //
    "24 B,0 5", //
    "27 B,1 6", "31 B,1", //
    "-1 c 4", "26 c", "28 c", //
    "12 C 2", "20 C", //
    "17 C,0 4", "21 C,0", //
    "-1 d 2", "11 d", //
    "5 D 1", "15 D", "22 D", //
    "8 D,0 2", "23 D,0", //
    "10 D,1 3", "16 D,1", //
    "-1 e 5", "35 e", //
    "29 E 4", //
    "32 E,0 7", //
    "34 E,1 8", //
    "-1 f 1", "4 f", "18 f", "33 f",
];

/// Step-4 annotation pairs: `occurrence-rank index`, 36 lines.
pub const STEP4_PAIRS: [&str; 36] = [
    "0 0", "1 0", "2 0", "3 1", "4 1", "5 1", "6 0", "7 0", "8 2", "9 0", "10 3", "11 2",
    "12 2", "13 0", "14 1", "15 1", "16 3", "17 4", "18 1", "19 3", "20 2", "21 4", "22 1",
    "23 2", "24 5", "25 3", "26 4", "27 6", "28 4", "29 4", "30 3", "31 6", "32 7", "33 1",
    "34 8", "35 5",
];

/// Distilled address view, one line per transaction:
/// `block timestamp tx nb-in nb-out in... out...`.
pub const DISTILLED_ADDRESSES: [&str; 5] = [
    "0 1610000000 0 0 2 0 1",
    "0 1610000000 1 1 2 0 0 2",
    "1 1610000600 2 2 1 1 2 1",
    "2 1610001200 3 2 2 0 1 3 4",
    "2 1610001200 4 1 2 4 1 5",
];

/// Distilled amount view: `block timestamp tx in-total out-total`.
pub const DISTILLED_AMOUNTS: [&str; 5] = [
    "0 1610000000 0 0 7",
    "0 1610000000 1 6 6",
    "1 1610000600 2 2 2",
    "2 1610001200 3 7 7",
    "2 1610001200 4 5 5",
];

/// Distilled TIO view: `spend-height tio-index creation-height`, one line
/// per non-coinbase input.
pub const DISTILLED_TIOS: [&str; 6] = [
    "0 0 0", // D spends A,0 within block 0
    "1 1 0", // C spends A,1
    "1 3 0", // C spends D,1
    "2 4 1", // B spends C,0
    "2 2 0", // B spends D,0
    "2 6 2", // E spends B,1 within block 2
];

/// Link/node records from the distilled address view:
/// `a b k-in k-out` (`a a 1 k-out` marks a single-input-address node).
pub const LINK_RECORDS: [&str; 4] = [
    "0 0 1 2", // D: one distinct input address (b)
    "1 2 2 1", // C: f-d co-input
    "0 1 2 2", // B: b-f co-input
    "4 4 1 2", // E: one distinct input address (c)
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_self_consistent() {
        let chain = raw_chain();
        assert_eq!(chain.len(), 3);
        for (h, block) in chain.iter().enumerate() {
            assert_eq!(block["height"].as_u64(), Some(h as u64));
            assert_eq!(block["time"].as_u64(), Some(TIMES[h]));
        }
        // hash chain holds
        assert_eq!(chain[1]["previousblockhash"], chain[0]["hash"]);
        assert_eq!(chain[2]["previousblockhash"], chain[1]["hash"]);
    }

    #[test]
    fn enriched_values_are_satoshi_integers() {
        let chain = enriched_chain();
        // B,0 carries 2 satoshis, B,1 five.
        assert_eq!(chain[2]["tx"][0]["vout"][0]["value"], Value::from(2u64));
        assert_eq!(chain[2]["tx"][0]["vout"][1]["value"], Value::from(5u64));
        // pubkey output gained its derived addresses list.
        assert_eq!(
            chain[2]["tx"][0]["vout"][1]["scriptPubKey"]["addresses"],
            serde_json::json!(["c"])
        );
    }

    #[test]
    fn strip_helpers() {
        assert_eq!(strip_tuple_tag("0 TA 0"), "0 A 0");
        assert_eq!(strip_tuple_tag("7 OA,0"), "7 A,0");
        assert_eq!(strip_tuple_tag("-1 Ab 0"), "-1 b 0");
        assert_eq!(strip_tag_at("Ab 5", 0), "b 5");
    }
}
