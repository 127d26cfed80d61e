//! Streaming ETL toolkit for bitcoin-style blockchain data.
//!
//! The pipeline turns a raw node-collected chain into analysis-ready flat
//! files without ever holding an index table in central memory:
//!
//! 1. **collect** — pull every block over JSON-RPC, newest first, one JSON
//!    object per line ([`collector::rpc`]).
//! 2. **reverse** — flip the file into chronological order with bounded
//!    memory ([`collector::reverse_blockfile`]).
//! 3. **enrich** — add derivable `addresses` lists and rewrite amounts as
//!    exact satoshi integers ([`collector::enrich_stream`]).
//! 4. **index** — assign dense, prefix-consistent integer indexes to every
//!    transaction, transaction input/output (TIO) and address through a
//!    four-step sort-based procedure ([`indexer`]), backed by a bounded
//!    memory external sorter ([`extsort`]).
//! 5. **distill** — flatten the indexed chain into compact per-transaction
//!    records ([`distiller`]).
//! 6. **cluster** / **stats** — input-based address clustering under
//!    (K_in, K_out) thresholds ([`cluster`]) and plot-ready tabular
//!    statistics ([`analytics`]).

pub mod analytics;
pub mod blockmodel;
pub mod cluster;
pub mod collector;
pub mod distiller;
pub mod error;
pub mod extsort;
pub mod golden;
pub mod indexer;
pub mod jsonl;

pub use error::{Error, Result};
