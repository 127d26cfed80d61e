//! Block data model and the canonical occurrence traversal.
//!
//! Blocks are kept as parsed JSON trees (`serde_json::Value`) rather than
//! fully typed structs: the pipeline must preserve every field it does not
//! understand, byte for byte, and a typed model would silently drop them.
//! The view types here wrap a `Value` and expose the fields the pipeline
//! needs, with errors that name the offending block/transaction.
//!
//! The occurrence traversal defined by [`OccurrenceWalker`] is the single
//! source of truth for the order in which items (transactions, TIOs,
//! addresses) appear. Index assignment, annotation, and distillation all
//! derive from it; two stages agreeing on this order is what lets the
//! indexer run without any in-memory index table.

mod satoshi;

pub use satoshi::{btc_to_satoshi, Satoshi, SAT_PER_BTC};

use std::fmt;

use serde_json::Value;

use crate::error::{Error, Result};

/// Namespace tag bytes prepended to serialized native identifiers.
///
/// Tuple files mix transactions, TIOs and addresses in one sort; the tag
/// guarantees identifiers from different namespaces can never collide.
pub const TAG_TX: char = 'T';
pub const TAG_TIO: char = 'O';
pub const TAG_ADDR: char = 'A';

/// Item namespaces that receive independent dense indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Namespace {
    Tx,
    Tio,
    Addr,
}

/// A blockchain-native identifier: transaction hash, (txid, output rank)
/// pair, or address string.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NativeId {
    Tx(String),
    Tio { txid: String, vout: u64 },
    Addr(String),
}

impl NativeId {
    pub fn namespace(&self) -> Namespace {
        match self {
            NativeId::Tx(_) => Namespace::Tx,
            NativeId::Tio { .. } => Namespace::Tio,
            NativeId::Addr(_) => Namespace::Addr,
        }
    }

    /// Serialized form with the namespace tag byte prefixed.
    pub fn tagged(&self) -> String {
        match self {
            NativeId::Tx(txid) => format!("{TAG_TX}{txid}"),
            NativeId::Tio { txid, vout } => format!("{TAG_TIO}{txid},{vout}"),
            NativeId::Addr(addr) => format!("{TAG_ADDR}{addr}"),
        }
    }

    /// Strips the namespace tag from a serialized identifier, recovering the
    /// native form ("A,0" style for TIOs).
    pub fn strip_tag(tagged: &str) -> &str {
        match tagged.chars().next() {
            Some(TAG_TX) | Some(TAG_TIO) | Some(TAG_ADDR) => &tagged[1..],
            _ => tagged,
        }
    }
}

impl fmt::Display for NativeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NativeId::Tx(txid) => f.write_str(txid),
            NativeId::Tio { txid, vout } => write!(f, "{txid},{vout}"),
            NativeId::Addr(addr) => f.write_str(addr),
        }
    }
}

/// Dense per-namespace index assigned in first-occurrence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemIndex(pub u64);

impl fmt::Display for ItemIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

fn obj<'a>(v: &'a Value, what: &str) -> Result<&'a serde_json::Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::Structure(format!("{what} is not a JSON object")))
}

fn field<'a>(m: &'a serde_json::Map<String, Value>, key: &str, what: &str) -> Result<&'a Value> {
    m.get(key)
        .ok_or_else(|| Error::Structure(format!("{what} lacks field {key:?}")))
}

fn u64_field(m: &serde_json::Map<String, Value>, key: &str, what: &str) -> Result<u64> {
    field(m, key, what)?
        .as_u64()
        .ok_or_else(|| Error::Structure(format!("{what} field {key:?} is not a non-negative integer")))
}

fn str_field<'a>(m: &'a serde_json::Map<String, Value>, key: &str, what: &str) -> Result<&'a str> {
    field(m, key, what)?
        .as_str()
        .ok_or_else(|| Error::Structure(format!("{what} field {key:?} is not a string")))
}

/// Read-only view over one block object.
#[derive(Clone, Copy)]
pub struct RawBlock<'a> {
    map: &'a serde_json::Map<String, Value>,
}

impl<'a> RawBlock<'a> {
    pub fn new(value: &'a Value) -> Result<Self> {
        Ok(RawBlock {
            map: obj(value, "block")?,
        })
    }

    pub fn height(&self) -> Result<u64> {
        u64_field(self.map, "height", "block")
    }

    pub fn hash(&self) -> Result<&'a str> {
        str_field(self.map, "hash", "block")
    }

    pub fn previousblockhash(&self) -> Option<&'a str> {
        self.map.get("previousblockhash").and_then(Value::as_str)
    }

    pub fn nextblockhash(&self) -> Option<&'a str> {
        self.map.get("nextblockhash").and_then(Value::as_str)
    }

    pub fn time(&self) -> Result<u64> {
        u64_field(self.map, "time", "block")
    }

    pub fn transactions(&self) -> Result<Vec<RawTransaction<'a>>> {
        let txs = field(self.map, "tx", "block")?
            .as_array()
            .ok_or_else(|| Error::Structure("block field \"tx\" is not an array".into()))?;
        txs.iter().map(RawTransaction::new).collect()
    }
}

/// Read-only view over one transaction object.
#[derive(Clone, Copy)]
pub struct RawTransaction<'a> {
    map: &'a serde_json::Map<String, Value>,
}

impl<'a> RawTransaction<'a> {
    pub fn new(value: &'a Value) -> Result<Self> {
        Ok(RawTransaction {
            map: obj(value, "transaction")?,
        })
    }

    pub fn txid(&self) -> Result<&'a str> {
        str_field(self.map, "txid", "transaction")
    }

    pub fn inputs(&self) -> Result<Vec<TxInput<'a>>> {
        let vin = field(self.map, "vin", "transaction")?
            .as_array()
            .ok_or_else(|| Error::Structure("transaction field \"vin\" is not an array".into()))?;
        vin.iter().map(TxInput::new).collect()
    }

    pub fn outputs(&self) -> Result<Vec<TxOutput<'a>>> {
        let vout = field(self.map, "vout", "transaction")?
            .as_array()
            .ok_or_else(|| Error::Structure("transaction field \"vout\" is not an array".into()))?;
        vout.iter().map(TxOutput::new).collect()
    }

    /// A coinbase transaction carries a coinbase input and no txid references.
    pub fn is_coinbase(&self) -> Result<bool> {
        Ok(self.inputs()?.iter().any(TxInput::is_coinbase))
    }
}

/// Read-only view over one transaction input.
#[derive(Clone, Copy)]
pub struct TxInput<'a> {
    map: &'a serde_json::Map<String, Value>,
}

impl<'a> TxInput<'a> {
    pub fn new(value: &'a Value) -> Result<Self> {
        Ok(TxInput {
            map: obj(value, "transaction input")?,
        })
    }

    pub fn is_coinbase(&self) -> bool {
        self.map.contains_key("coinbase")
    }

    /// The (txid, output rank) pair this input spends; `None` for coinbase.
    /// An input must be exactly one of the two forms.
    pub fn spend(&self) -> Result<Option<(&'a str, u64)>> {
        if self.is_coinbase() {
            if self.map.contains_key("txid") || self.map.contains_key("vout") {
                return Err(Error::Structure(
                    "input carries both a coinbase marker and a txid reference".into(),
                ));
            }
            return Ok(None);
        }
        let txid = str_field(self.map, "txid", "input")?;
        let vout = u64_field(self.map, "vout", "input")?;
        Ok(Some((txid, vout)))
    }
}

/// Read-only view over one transaction output.
#[derive(Clone, Copy)]
pub struct TxOutput<'a> {
    map: &'a serde_json::Map<String, Value>,
}

impl<'a> TxOutput<'a> {
    pub fn new(value: &'a Value) -> Result<Self> {
        Ok(TxOutput {
            map: obj(value, "transaction output")?,
        })
    }

    pub fn n(&self) -> Result<u64> {
        u64_field(self.map, "n", "output")
    }

    /// The raw textual form of the value field, exactly as it appears in the
    /// JSON. Enriched chains hold plain satoshi integers here; raw RPC data
    /// holds eight-decimal bitcoin amounts.
    pub fn value_text(&self) -> Result<&'a str> {
        match field(self.map, "value", "output")? {
            Value::Number(n) => Ok(n.as_str()),
            _ => Err(Error::Structure("output field \"value\" is not a number".into())),
        }
    }

    /// The value as exact satoshis; only valid on enriched chains where the
    /// field is already an integer.
    pub fn value_satoshi(&self) -> Result<Satoshi> {
        let text = self.value_text()?;
        text.parse::<u64>().map(Satoshi).map_err(|_| {
            Error::Structure(format!(
                "output value {text:?} is not an integer satoshi amount (is the chain enriched?)"
            ))
        })
    }

    pub fn script_pub_key(&self) -> Result<ScriptPubKey<'a>> {
        ScriptPubKey::new(field(self.map, "scriptPubKey", "output")?)
    }
}

/// Read-only view over a scriptPubKey object.
#[derive(Clone, Copy)]
pub struct ScriptPubKey<'a> {
    map: &'a serde_json::Map<String, Value>,
}

impl<'a> ScriptPubKey<'a> {
    pub fn new(value: &'a Value) -> Result<Self> {
        Ok(ScriptPubKey {
            map: obj(value, "scriptPubKey")?,
        })
    }

    pub fn type_tag(&self) -> Option<&'a str> {
        self.map.get("type").and_then(Value::as_str)
    }

    pub fn asm(&self) -> Option<&'a str> {
        self.map.get("asm").and_then(Value::as_str)
    }

    /// The explicit addresses list, if present.
    pub fn addresses(&self) -> Result<Option<Vec<&'a str>>> {
        match self.map.get("addresses") {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str().ok_or_else(|| {
                        Error::Structure("scriptPubKey addresses entry is not a string".into())
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(Error::Structure(
                "scriptPubKey field \"addresses\" is not an array".into(),
            )),
        }
    }
}

/// Derives the addresses of an output from its scriptPubKey.
///
/// Rules: `nulldata` and `nonstandard` outputs have no address; an explicit
/// `addresses` list wins; a `pubkey` output's address is the first
/// whitespace-separated word of its `asm`. Any other type without an
/// addresses list is treated as address-less.
pub fn extract_addresses(spk: &ScriptPubKey) -> Result<Vec<String>> {
    match spk.type_tag() {
        Some("nulldata") | Some("nonstandard") => return Ok(Vec::new()),
        _ => {}
    }
    if let Some(list) = spk.addresses()? {
        return Ok(list.into_iter().map(str::to_owned).collect());
    }
    if spk.type_tag() == Some("pubkey") {
        let word = spk.asm().and_then(|asm| asm.split_whitespace().next());
        return match word {
            Some(w) => Ok(vec![w.to_owned()]),
            None => Err(Error::Structure(
                "pubkey scriptPubKey with empty asm".into(),
            )),
        };
    }
    if let Some(t) = spk.type_tag() {
        log::debug!("scriptPubKey type {t:?} has no derivable address");
    }
    Ok(Vec::new())
}

/// Where in a transaction an occurrence lives. `vin`/`vout`/`addr` are
/// positions inside the transaction, used by the annotator to place index
/// fields without a second bookkeeping pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteKind {
    /// The transaction's own txid.
    Tx,
    /// The txid referenced by input `vin`.
    InputTxid { vin: usize },
    /// The TIO referenced by input `vin`.
    InputTio { vin: usize },
    /// The TIO created by output `vout`.
    OutputTio { vout: usize },
    /// Address number `addr` of output `vout`.
    OutputAddr { vout: usize, addr: usize },
}

/// One item occurrence in the canonical traversal.
#[derive(Debug, Clone)]
pub struct Occurrence {
    /// Global occurrence rank, counting every emitted occurrence from 0.
    pub rank: u64,
    pub id: NativeId,
    /// Present when the index is known at emission time: transactions and
    /// freshly created outputs.
    pub index: Option<ItemIndex>,
    /// Position of the transaction within its block.
    pub tx_pos: usize,
    pub site: SiteKind,
}

impl Occurrence {
    /// Space-delimited tuple line: `rank tagged-id [index]`.
    pub fn tuple_line(&self) -> String {
        match self.index {
            Some(idx) => format!("{} {} {}", self.rank, self.id.tagged(), idx),
            None => format!("{} {}", self.rank, self.id.tagged()),
        }
    }
}

/// Totals accumulated over a traversal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WalkStats {
    pub blocks: u64,
    pub transactions: u64,
    pub tios: u64,
    pub occurrences: u64,
}

/// Stateful traversal emitting every item occurrence in canonical order.
///
/// Per transaction: its txid (with the running transaction index); then per
/// non-coinbase input the referenced txid and the referenced TIO (no index);
/// then per output the created TIO (with the running output index) followed
/// by each of its addresses (no index). Coinbase inputs emit nothing.
#[derive(Debug, Default)]
pub struct OccurrenceWalker {
    next_height: u64,
    next_tx_index: u64,
    next_tio_index: u64,
    next_rank: u64,
    blocks: u64,
}

fn check_token(kind: &str, token: &str) -> Result<()> {
    if token.is_empty() {
        return Err(Error::Structure(format!("empty {kind}")));
    }
    if token.chars().any(char::is_whitespace) {
        return Err(Error::Structure(format!(
            "{kind} {token:?} contains whitespace; cannot serialize into tuple files"
        )));
    }
    Ok(())
}

impl OccurrenceWalker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> WalkStats {
        WalkStats {
            blocks: self.blocks,
            transactions: self.next_tx_index,
            tios: self.next_tio_index,
            occurrences: self.next_rank,
        }
    }

    /// Walks one block, feeding each occurrence to `sink` in canonical order.
    /// Blocks must arrive with consecutive heights starting at 0.
    pub fn walk_block(
        &mut self,
        block: &RawBlock,
        sink: &mut dyn FnMut(Occurrence) -> Result<()>,
    ) -> Result<()> {
        let height = block.height()?;
        if height != self.next_height {
            return Err(Error::Sequencing(format!(
                "expected block height {}, got {height}",
                self.next_height
            )));
        }
        self.next_height += 1;
        self.blocks += 1;

        for (tx_pos, tx) in block.transactions()?.into_iter().enumerate() {
            let txid = tx
                .txid()
                .map_err(|e| Error::Structure(format!("block {height}: {e}")))?;
            check_token("txid", txid)?;

            let mut emit = |id: NativeId, index: Option<ItemIndex>, site: SiteKind| {
                let occ = Occurrence {
                    rank: self.next_rank,
                    id,
                    index,
                    tx_pos,
                    site,
                };
                self.next_rank += 1;
                sink(occ)
            };

            emit(
                NativeId::Tx(txid.to_owned()),
                Some(ItemIndex(self.next_tx_index)),
                SiteKind::Tx,
            )?;
            self.next_tx_index += 1;

            for (vin, input) in tx.inputs()?.into_iter().enumerate() {
                let spend = input
                    .spend()
                    .map_err(|e| Error::Structure(format!("block {height} tx {txid}: {e}")))?;
                if let Some((ref_txid, ref_vout)) = spend {
                    check_token("txid", ref_txid)?;
                    emit(
                        NativeId::Tx(ref_txid.to_owned()),
                        None,
                        SiteKind::InputTxid { vin },
                    )?;
                    emit(
                        NativeId::Tio {
                            txid: ref_txid.to_owned(),
                            vout: ref_vout,
                        },
                        None,
                        SiteKind::InputTio { vin },
                    )?;
                }
            }

            for (vout, output) in tx.outputs()?.into_iter().enumerate() {
                let n = output
                    .n()
                    .map_err(|e| Error::Structure(format!("block {height} tx {txid}: {e}")))?;
                if n != vout as u64 {
                    return Err(Error::Structure(format!(
                        "block {height} tx {txid}: output rank field n={n} \
                         does not match its position {vout}"
                    )));
                }
                emit(
                    NativeId::Tio {
                        txid: txid.to_owned(),
                        vout: n,
                    },
                    Some(ItemIndex(self.next_tio_index)),
                    SiteKind::OutputTio { vout },
                )?;
                self.next_tio_index += 1;

                let spk = output.script_pub_key().map_err(|e| {
                    Error::Structure(format!("block {height} tx {txid} output {n}: {e}"))
                })?;
                let addrs = extract_addresses(&spk).map_err(|e| {
                    Error::Structure(format!("block {height} tx {txid} output {n}: {e}"))
                })?;
                for (addr_pos, addr) in addrs.iter().enumerate() {
                    check_token("address", addr)?;
                    emit(
                        NativeId::Addr(addr.clone()),
                        None,
                        SiteKind::OutputAddr {
                            vout,
                            addr: addr_pos,
                        },
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Walks a whole chain of parsed block values.
pub fn iterate_occurrences(
    blocks: impl Iterator<Item = Result<Value>>,
    mut sink: impl FnMut(Occurrence) -> Result<()>,
) -> Result<WalkStats> {
    let mut walker = OccurrenceWalker::new();
    for block in blocks {
        let value = block?;
        let view = RawBlock::new(&value)?;
        walker.walk_block(&view, &mut |occ| sink(occ))?;
    }
    Ok(walker.stats())
}
