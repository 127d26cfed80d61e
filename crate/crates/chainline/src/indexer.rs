//! Four-step prefix-consistent indexing and on-the-fly annotation.
//!
//! No index table is ever held in memory. Instead the chain is turned into
//! occurrence tuples, external sorts group every native identifier with the
//! one tuple that carries its index, and a final rank-sorted pair file
//! drives a joint parse that writes the indexes back into the JSON — every
//! original field preserved.
//!
//! * step 1 — list all occurrences `rank native-id [index]`; transactions
//!   and freshly created TIOs carry their index already (running counters).
//! * step 2 — list address occurrences with an address-occurrence rank,
//!   sort by (address, rank), keep the first per address, re-sort by rank,
//!   and enumerate: `-1 address index` per distinct address.
//! * step 3 — sort the union of both tuple files by (identifier, rank);
//!   each group now starts with its indexed tuple.
//! * step 4 — emit `rank index` per non-sentinel tuple and sort by rank,
//!   yielding exactly one annotation pair per occurrence.
//!
//! The same bounded-memory indexing could be done with only an in-memory
//! sort routine by re-parsing the chain once per memory-sized batch of
//! occurrences; this implementation always delegates to [`extsort`], which
//! handles arbitrary volumes in one parse.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::blockmodel::{OccurrenceWalker, RawBlock, SiteKind, WalkStats};
use crate::error::{Error, Result};
use crate::extsort::{external_sort, unique_first, SortBudget, SortKeySpec};
use crate::jsonl;

/// Sort key of step 3: identifier text, then rank numerically (the -1
/// sentinel sorts before every real rank).
fn group_key() -> SortKeySpec {
    SortKeySpec::parse("1,0:num").expect("static key spec")
}

fn rank_key() -> SortKeySpec {
    SortKeySpec::parse("0:num").expect("static key spec")
}

fn write_line(out: &mut impl Write, line: &str) -> Result<()> {
    out.write_all(line.as_bytes())
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| Error::io("<tuple output>", e))
}

/// Step 1: serialize the canonical occurrence stream, one tuple per line.
pub fn step1_occurrences(chain: impl BufRead, mut out: impl Write) -> Result<WalkStats> {
    let mut walker = OccurrenceWalker::new();
    for block in jsonl::json_values(chain, "<chain>") {
        let value = block?;
        let view = RawBlock::new(&value)?;
        walker.walk_block(&view, &mut |occ| write_line(&mut out, &occ.tuple_line()))?;
    }
    out.flush().map_err(|e| Error::io("<tuple output>", e))?;
    Ok(walker.stats())
}

/// Step 2: distinct addresses in first-occurrence order, emitted as
/// `-1 address index` triplets.
pub fn step2_address_triplets(
    chain: impl BufRead,
    mut out: impl Write,
    budget: &SortBudget,
) -> Result<u64> {
    // Pass over the chain listing `address address-rank` lines; the rank is
    // a dedicated counter over address occurrences only.
    let mut occurrence_lines: Vec<String> = Vec::new();
    let mut spill = OccurrenceSpiller::new(budget);
    let mut walker = OccurrenceWalker::new();
    let mut addr_rank = 0u64;
    for block in jsonl::json_values(chain, "<chain>") {
        let value = block?;
        let view = RawBlock::new(&value)?;
        walker.walk_block(&view, &mut |occ| {
            if matches!(occ.site, SiteKind::OutputAddr { .. }) {
                let line = format!("{} {}", occ.id.tagged(), addr_rank);
                addr_rank += 1;
                spill.push(&mut occurrence_lines, line)?;
            }
            Ok(())
        })?;
    }
    let occurrences = spill.into_reader(occurrence_lines)?;

    // Sort by (address, rank), keep the first tuple per address, then sort
    // the survivors by rank; their position in that order is the index.
    let by_address = external_sort(occurrences, &SortKeySpec::parse("0,1:num")?, budget)?;
    let firsts = unique_first(by_address, &SortKeySpec::parse("0")?);
    let by_rank = external_sort(firsts, &SortKeySpec::parse("1:num")?, budget)?;

    let mut index = 0u64;
    for line in by_rank {
        let line = line?;
        let address = line
            .split(' ')
            .next()
            .ok_or_else(|| Error::Parse(format!("bad address tuple {line:?}")))?;
        write_line(&mut out, &format!("-1 {address} {index}"))?;
        index += 1;
    }
    out.flush().map_err(|e| Error::io("<tuple output>", e))?;
    Ok(index)
}

/// Buffers lines in memory up to the sort budget, then spills the rest to a
/// temp file so huge passes stay bounded.
struct OccurrenceSpiller {
    budget_bytes: usize,
    buffered_bytes: usize,
    file: Option<(PathBuf, BufWriter<File>, tempfile::TempDir)>,
    spill_dir: PathBuf,
}

impl OccurrenceSpiller {
    fn new(budget: &SortBudget) -> Self {
        OccurrenceSpiller {
            budget_bytes: budget.memory_bytes,
            buffered_bytes: 0,
            file: None,
            spill_dir: budget.spill_dir.clone(),
        }
    }

    fn push(&mut self, buffer: &mut Vec<String>, line: String) -> Result<()> {
        if let Some((path, writer, _)) = &mut self.file {
            writer
                .write_all(line.as_bytes())
                .and_then(|_| writer.write_all(b"\n"))
                .map_err(|e| Error::io(path.clone(), e))?;
            return Ok(());
        }
        self.buffered_bytes += line.len() + 32;
        buffer.push(line);
        if self.buffered_bytes > self.budget_bytes {
            std::fs::create_dir_all(&self.spill_dir)
                .map_err(|e| Error::io(&self.spill_dir, e))?;
            let dir = tempfile::Builder::new()
                .prefix("chainline-occurrences-")
                .tempdir_in(&self.spill_dir)
                .map_err(|e| Error::io(&self.spill_dir, e))?;
            let path = dir.path().join("occurrences");
            let mut writer =
                BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            for line in buffer.drain(..) {
                writer
                    .write_all(line.as_bytes())
                    .and_then(|_| writer.write_all(b"\n"))
                    .map_err(|e| Error::io(&path, e))?;
            }
            self.file = Some((path, writer, dir));
        }
        Ok(())
    }

    fn into_reader(self, buffer: Vec<String>) -> Result<Box<dyn Iterator<Item = Result<String>>>> {
        match self.file {
            None => Ok(Box::new(buffer.into_iter().map(Ok))),
            Some((path, mut writer, dir)) => {
                writer.flush().map_err(|e| Error::io(&path, e))?;
                drop(writer);
                let reader = BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?);
                let lines = jsonl::Lines::new(reader, path).map(|r| r.map(|(_, l)| l));
                // Keep the temp dir alive for the iterator's lifetime.
                Ok(Box::new(HoldDir { inner: lines, _dir: dir }))
            }
        }
    }
}

struct HoldDir<I> {
    inner: I,
    _dir: tempfile::TempDir,
}

impl<I: Iterator> Iterator for HoldDir<I> {
    type Item = I::Item;
    fn next(&mut self) -> Option<Self::Item> {
        self.inner.next()
    }
}

fn tuple_rank(line: &str) -> Result<i64> {
    line.split(' ')
        .next()
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Parse(format!("tuple {line:?} has no numeric rank")))
}

fn tuple_id(line: &str) -> Result<&str> {
    line.split(' ')
        .nth(1)
        .ok_or_else(|| Error::Parse(format!("tuple {line:?} has no identifier")))
}

fn tuple_index(line: &str) -> Option<&str> {
    line.split(' ').nth(2)
}

/// Step 3: merge both tuple files and sort by (identifier, rank). Verifies
/// while writing that every group leads with an indexed tuple.
pub fn step3_group(
    step1: &Path,
    step2: &Path,
    out: &mut impl Write,
    budget: &SortBudget,
) -> Result<u64> {
    let read = |path: &Path| -> Result<_> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(jsonl::Lines::new(BufReader::new(file), path).map(|r| r.map(|(_, l)| l)))
    };
    let combined = read(step1)?.chain(read(step2)?);
    let sorted = external_sort(combined, &group_key(), budget)?;

    let mut groups = 0u64;
    let mut current_group: Option<String> = None;
    for line in sorted {
        let line = line?;
        let id = tuple_id(&line)?.to_owned();
        if current_group.as_deref() != Some(id.as_str()) {
            if tuple_index(&line).is_none() {
                return Err(Error::Invariant(format!(
                    "group {id:?} starts with an unindexed tuple {line:?}; \
                     every item must be indexed at its first occurrence"
                )));
            }
            current_group = Some(id);
            groups += 1;
        }
        write_line(out, &line)?;
    }
    out.flush().map_err(|e| Error::io("<tuple output>", e))?;
    Ok(groups)
}

/// Step 4: per group, emit `rank index` for every tuple with a real rank,
/// then sort by rank. Verifies the pairs cover ranks 0..M-1 exactly.
pub fn step4_annotation_stream(
    grouped: &Path,
    out: &mut impl Write,
    budget: &SortBudget,
) -> Result<u64> {
    let file = File::open(grouped).map_err(|e| Error::io(grouped, e))?;
    let lines = jsonl::Lines::new(BufReader::new(file), grouped).map(|r| r.map(|(_, l)| l));

    let mut current: Option<(String, String)> = None; // (id, index)
    let pairs = lines.filter_map(move |item| {
        let line = match item {
            Ok(l) => l,
            Err(e) => return Some(Err(e)),
        };
        let id = match tuple_id(&line) {
            Ok(i) => i.to_owned(),
            Err(e) => return Some(Err(e)),
        };
        if current.as_ref().map(|(i, _)| i.as_str()) != Some(id.as_str()) {
            let index = match tuple_index(&line) {
                Some(i) => i.to_owned(),
                None => {
                    return Some(Err(Error::Invariant(format!(
                        "group {id:?} starts with an unindexed tuple"
                    ))))
                }
            };
            current = Some((id, index));
        }
        let rank = match tuple_rank(&line) {
            Ok(r) => r,
            Err(e) => return Some(Err(e)),
        };
        if rank < 0 {
            return None; // -1 sentinel triplets annotate nothing
        }
        let (_, index) = current.as_ref().expect("set above");
        Some(Ok(format!("{rank} {index}")))
    });

    let sorted = external_sort(pairs, &rank_key(), budget)?;
    let mut expected = 0u64;
    for pair in sorted {
        let pair = pair?;
        let rank = tuple_rank(&pair)?;
        if rank != expected as i64 {
            return Err(Error::Invariant(format!(
                "annotation ranks must be dense: expected {expected}, got {rank}"
            )));
        }
        expected += 1;
        write_line(out, &pair)?;
    }
    out.flush().map_err(|e| Error::io("<pair output>", e))?;
    Ok(expected)
}

/// Reads `rank index` pairs in rank order.
struct PairReader<R> {
    lines: jsonl::Lines<R>,
    next_rank: u64,
}

impl<R: BufRead> PairReader<R> {
    fn new(reader: R) -> Self {
        PairReader {
            lines: jsonl::Lines::new(reader, "<annotation pairs>"),
            next_rank: 0,
        }
    }

    /// Returns the index annotated for occurrence `rank`.
    fn index_for(&mut self, rank: u64) -> Result<u64> {
        let (_, line) = self.lines.next().transpose()?.ok_or_else(|| {
            Error::Alignment(format!(
                "annotation stream ended early: no pair for occurrence rank {rank}"
            ))
        })?;
        let mut fields = line.split(' ');
        let got_rank: u64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad annotation pair {line:?}")))?;
        let index: u64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad annotation pair {line:?}")))?;
        if got_rank != rank {
            return Err(Error::Alignment(format!(
                "annotation pair rank {got_rank} does not match occurrence rank {rank}"
            )));
        }
        self.next_rank = rank + 1;
        Ok(index)
    }

    fn finish(mut self) -> Result<()> {
        if let Some(item) = self.lines.next() {
            let (_, line) = item?;
            return Err(Error::Alignment(format!(
                "annotation stream has leftover pairs starting at {line:?} \
                 (chain traversal ended at rank {})",
                self.next_rank
            )));
        }
        Ok(())
    }
}

/// Names of the fields the annotator adds.
pub const ADDED_TX_FIELD: &str = "index";
pub const ADDED_TXID_FIELD: &str = "txid_index";
pub const ADDED_TIO_FIELD: &str = "tio_index";
pub const ADDED_ADDR_FIELD: &str = "address_indexes";

/// Jointly parses the chain and the annotation pair file, adding index
/// fields in place: `index` on transactions, `txid_index` and `tio_index`
/// on inputs, `tio_index` on outputs, and `address_indexes` (parallel to
/// `addresses`) on scriptPubKeys. Nothing else is touched.
pub fn annotate(
    chain: impl BufRead,
    pairs: impl BufRead,
    mut out: impl Write,
) -> Result<WalkStats> {
    let mut pair_reader = PairReader::new(pairs);
    let mut walker = OccurrenceWalker::new();

    for block in jsonl::json_values(chain, "<chain>") {
        let mut value = block?;

        // Collect (site, index) with a read-only walk, then apply the
        // mutations; one block is the only buffered state.
        let mut sites: Vec<(usize, SiteKind, u64)> = Vec::new();
        {
            let view = RawBlock::new(&value)?;
            walker.walk_block(&view, &mut |occ| {
                let index = pair_reader.index_for(occ.rank)?;
                sites.push((occ.tx_pos, occ.site, index));
                Ok(())
            })?;
        }

        let txs = value
            .get_mut("tx")
            .and_then(Value::as_array_mut)
            .expect("walked above");
        for (tx_pos, site, index) in sites {
            let tx = txs[tx_pos].as_object_mut().expect("walked above");
            match site {
                SiteKind::Tx => {
                    tx.insert(ADDED_TX_FIELD.to_owned(), Value::from(index));
                }
                SiteKind::InputTxid { vin } => {
                    let input = tx["vin"][vin].as_object_mut().expect("walked above");
                    input.insert(ADDED_TXID_FIELD.to_owned(), Value::from(index));
                }
                SiteKind::InputTio { vin } => {
                    let input = tx["vin"][vin].as_object_mut().expect("walked above");
                    input.insert(ADDED_TIO_FIELD.to_owned(), Value::from(index));
                }
                SiteKind::OutputTio { vout } => {
                    let output = tx["vout"][vout].as_object_mut().expect("walked above");
                    output.insert(ADDED_TIO_FIELD.to_owned(), Value::from(index));
                }
                SiteKind::OutputAddr { vout, addr } => {
                    let spk = tx["vout"][vout]["scriptPubKey"]
                        .as_object_mut()
                        .expect("walked above");
                    if addr == 0 {
                        spk.insert(ADDED_ADDR_FIELD.to_owned(), Value::Array(Vec::new()));
                    }
                    spk[ADDED_ADDR_FIELD]
                        .as_array_mut()
                        .expect("just inserted")
                        .push(Value::from(index));
                }
            }
        }

        jsonl::write_json_line(&mut out, &value)?;
    }

    pair_reader.finish()?;
    out.flush().map_err(|e| Error::io("<indexed chain>", e))?;
    Ok(walker.stats())
}

/// Removes every field the annotator adds, recovering the enriched chain.
pub fn strip_index_fields(indexed: impl BufRead, mut out: impl Write) -> Result<u64> {
    let mut blocks = 0u64;
    for block in jsonl::json_values(indexed, "<indexed chain>") {
        let mut value = block?;
        if let Some(txs) = value.get_mut("tx").and_then(Value::as_array_mut) {
            for tx in txs {
                let Some(tx) = tx.as_object_mut() else { continue };
                tx.shift_remove(ADDED_TX_FIELD);
                if let Some(vin) = tx.get_mut("vin").and_then(Value::as_array_mut) {
                    for input in vin {
                        if let Some(input) = input.as_object_mut() {
                            input.shift_remove(ADDED_TXID_FIELD);
                            input.shift_remove(ADDED_TIO_FIELD);
                        }
                    }
                }
                if let Some(vout) = tx.get_mut("vout").and_then(Value::as_array_mut) {
                    for output in vout {
                        if let Some(output) = output.as_object_mut() {
                            output.shift_remove(ADDED_TIO_FIELD);
                        }
                        if let Some(spk) = output
                            .get_mut("scriptPubKey")
                            .and_then(Value::as_object_mut)
                        {
                            spk.shift_remove(ADDED_ADDR_FIELD);
                        }
                    }
                }
            }
        }
        jsonl::write_json_line(&mut out, &value)?;
        blocks += 1;
    }
    out.flush().map_err(|e| Error::io("<stripped chain>", e))?;
    Ok(blocks)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IndexStats {
    pub walk: WalkStats,
    pub addresses: u64,
    pub groups: u64,
    pub annotations: u64,
}

/// Runs steps 1-4 and the final annotation over a chain file.
///
/// Intermediates live in the spill directory as `<name>.step1` ..
/// `<name>.step4` and are removed afterwards unless `keep_intermediates` is
/// set. The chain is parsed three times (steps 1, 2, and annotation), never
/// held in memory.
pub fn index_chain(
    input: &Path,
    output: &Path,
    budget: &SortBudget,
    keep_intermediates: bool,
    gzip_output: bool,
) -> Result<IndexStats> {
    std::fs::create_dir_all(&budget.spill_dir).map_err(|e| Error::io(&budget.spill_dir, e))?;
    let stem = input
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "chain".to_owned());
    let inter = |step: &str| budget.spill_dir.join(format!("{stem}.{step}"));

    let step1_path = inter("step1");
    let step2_path = inter("step2");
    let step3_path = inter("step3");
    let step4_path = inter("step4");

    let mut stats = IndexStats::default();

    {
        let mut out =
            BufWriter::new(File::create(&step1_path).map_err(|e| Error::io(&step1_path, e))?);
        stats.walk = step1_occurrences(jsonl::open_input(Some(input))?, &mut out)?;
    }
    {
        let mut out =
            BufWriter::new(File::create(&step2_path).map_err(|e| Error::io(&step2_path, e))?);
        stats.addresses =
            step2_address_triplets(jsonl::open_input(Some(input))?, &mut out, budget)?;
    }
    {
        let mut out =
            BufWriter::new(File::create(&step3_path).map_err(|e| Error::io(&step3_path, e))?);
        stats.groups = step3_group(&step1_path, &step2_path, &mut out, budget)?;
    }
    {
        let mut out =
            BufWriter::new(File::create(&step4_path).map_err(|e| Error::io(&step4_path, e))?);
        stats.annotations = step4_annotation_stream(&step3_path, &mut out, budget)?;
    }
    {
        let pairs =
            BufReader::new(File::open(&step4_path).map_err(|e| Error::io(&step4_path, e))?);
        let out = jsonl::open_output(Some(output), gzip_output)?;
        annotate(jsonl::open_input(Some(input))?, pairs, out)?;
    }

    if !keep_intermediates {
        for path in [&step1_path, &step2_path, &step3_path, &step4_path] {
            let _ = std::fs::remove_file(path);
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::golden;
    use std::io::Cursor;

    fn budget(dir: &Path) -> SortBudget {
        SortBudget::new(1 << 20, dir)
    }

    fn run_step1() -> Vec<String> {
        let mut out = Vec::new();
        step1_occurrences(Cursor::new(golden::enriched_jsonl()), &mut out).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(str::to_owned)
            .collect()
    }

    #[test]
    fn step1_reproduces_the_expected_listing() {
        let stripped: Vec<String> = run_step1()
            .iter()
            .map(|l| golden::strip_tuple_tag(l))
            .collect();
        assert_eq!(stripped, golden::STEP1_TUPLES);
    }

    #[test]
    fn step2_triplets_match_expected() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Vec::new();
        let count = step2_address_triplets(
            Cursor::new(golden::enriched_jsonl()),
            &mut out,
            &budget(dir.path()),
        )
        .unwrap();
        assert_eq!(count, 6);
        let stripped: Vec<String> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(golden::strip_tuple_tag)
            .collect();
        assert_eq!(stripped, golden::STEP2_TRIPLETS);
    }

    #[test]
    fn step2_on_addressless_chain_is_empty() {
        let chain = r#"{"height":0,"hash":"h0","time":1,"tx":[{"txid":"X","vin":[{"coinbase":"00"}],"vout":[{"value":0,"n":0,"scriptPubKey":{"type":"nulldata","asm":"OP_RETURN"}}]}]}"#;
        let dir = tempfile::tempdir().unwrap();
        let mut out = Vec::new();
        let count = step2_address_triplets(
            Cursor::new(format!("{chain}\n")),
            &mut out,
            &budget(dir.path()),
        )
        .unwrap();
        assert_eq!(count, 0);
        assert!(out.is_empty());
    }

    fn run_steps_1_to_4(dir: &Path) -> (PathBuf, PathBuf) {
        let b = budget(dir);
        let step1 = dir.join("step1");
        let step2 = dir.join("step2");
        let step3 = dir.join("step3");
        let step4 = dir.join("step4");
        {
            let mut out = File::create(&step1).unwrap();
            step1_occurrences(Cursor::new(golden::enriched_jsonl()), &mut out).unwrap();
        }
        {
            let mut out = File::create(&step2).unwrap();
            step2_address_triplets(Cursor::new(golden::enriched_jsonl()), &mut out, &b).unwrap();
        }
        {
            let mut out = File::create(&step3).unwrap();
            step3_group(&step1, &step2, &mut out, &b).unwrap();
        }
        {
            let mut out = File::create(&step4).unwrap();
            step4_annotation_stream(&step3, &mut out, &b).unwrap();
        }
        (step3, step4)
    }

    /// Splits a grouped tuple file into (id -> lines) groups, checking each
    /// group is contiguous.
    fn groups_of(lines: &[String]) -> std::collections::BTreeMap<String, Vec<String>> {
        let mut groups: std::collections::BTreeMap<String, Vec<String>> = Default::default();
        let mut last: Option<String> = None;
        for line in lines {
            let id = line.split(' ').nth(1).unwrap().to_owned();
            if last.as_deref() != Some(id.as_str()) {
                assert!(!groups.contains_key(&id), "group {id} is not contiguous");
                last = Some(id.clone());
            }
            groups.entry(id).or_default().push(line.clone());
        }
        groups
    }

    #[test]
    fn step3_groups_match_expected_content() {
        let dir = tempfile::tempdir().unwrap();
        let (step3, _) = run_steps_1_to_4(dir.path());
        let got_lines: Vec<String> = std::fs::read_to_string(&step3)
            .unwrap()
            .lines()
            .map(golden::strip_tuple_tag)
            .collect();
        let expected_lines: Vec<String> =
            golden::STEP3_GROUPED.iter().map(|s| s.to_string()).collect();
        assert_eq!(groups_of(&got_lines), groups_of(&expected_lines));

        // Spot-check the groups called out in the worked example.
        let groups = groups_of(&got_lines);
        assert_eq!(groups["c"], vec!["-1 c 4", "26 c", "28 c"]);
        assert_eq!(groups["D,1"], vec!["10 D,1 3", "16 D,1"]);
    }

    #[test]
    fn step4_pairs_match_expected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, step4) = run_steps_1_to_4(dir.path());
        let got: Vec<String> = std::fs::read_to_string(&step4)
            .unwrap()
            .lines()
            .map(str::to_owned)
            .collect();
        assert_eq!(got, golden::STEP4_PAIRS);
    }

    #[test]
    fn single_transaction_chain_has_single_tuple_groups() {
        let chain = r#"{"height":0,"hash":"h0","time":1,"tx":[{"txid":"X","vin":[{"coinbase":"00"}],"vout":[{"value":1,"n":0,"scriptPubKey":{"type":"pubkey","asm":"z"}}]}]}"#;
        let dir = tempfile::tempdir().unwrap();
        let b = budget(dir.path());
        let step1 = dir.path().join("s1");
        let step2 = dir.path().join("s2");
        let mut out = File::create(&step1).unwrap();
        step1_occurrences(Cursor::new(format!("{chain}\n")), &mut out).unwrap();
        let mut out = File::create(&step2).unwrap();
        step2_address_triplets(Cursor::new(format!("{chain}\n")), &mut out, &b).unwrap();
        let mut grouped = Vec::new();
        step3_group(&step1, &step2, &mut grouped, &b).unwrap();
        let lines: Vec<String> = String::from_utf8(grouped)
            .unwrap()
            .lines()
            .map(str::to_owned)
            .collect();
        // 3 groups (X, X's output, z), each a single tuple except the
        // address group which pairs the sentinel with one occurrence.
        let groups = groups_of(&lines);
        assert_eq!(groups.len(), 3);
    }

    #[test]
    fn empty_chain_produces_empty_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let b = budget(dir.path());
        let step1 = dir.path().join("s1");
        let step2 = dir.path().join("s2");
        File::create(&step1).unwrap();
        File::create(&step2).unwrap();
        let mut grouped = Vec::new();
        assert_eq!(step3_group(&step1, &step2, &mut grouped, &b).unwrap(), 0);
        assert!(grouped.is_empty());
        let step3 = dir.path().join("s3");
        File::create(&step3).unwrap();
        let mut pairs = Vec::new();
        assert_eq!(step4_annotation_stream(&step3, &mut pairs, &b).unwrap(), 0);
        assert!(pairs.is_empty());
    }

    fn indexed_golden() -> Vec<Value> {
        let dir = tempfile::tempdir().unwrap();
        let (_, step4) = run_steps_1_to_4(dir.path());
        let pairs = std::fs::read(&step4).unwrap();
        let mut out = Vec::new();
        annotate(
            Cursor::new(golden::enriched_jsonl()),
            Cursor::new(pairs),
            &mut out,
        )
        .unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn annotate_places_expected_indexes() {
        let chain = indexed_golden();
        // Transaction E gained index 4; its input (B,1) resolves to
        // txid_index 3 and tio_index 6.
        let tx_e = &chain[2]["tx"][1];
        assert_eq!(tx_e["index"], Value::from(4u64));
        assert_eq!(tx_e["vin"][0]["txid_index"], Value::from(3u64));
        assert_eq!(tx_e["vin"][0]["tio_index"], Value::from(6u64));
        // Transaction B output 0 carries tio_index 5 and addresses a,c ->
        // indexes [3, 4].
        let out_b0 = &chain[2]["tx"][0]["vout"][0];
        assert_eq!(out_b0["tio_index"], Value::from(5u64));
        assert_eq!(
            out_b0["scriptPubKey"]["address_indexes"],
            serde_json::json!([3, 4])
        );
        // Coinbase input gained no fields.
        let coinbase_in = chain[0]["tx"][0]["vin"][0].as_object().unwrap();
        assert!(!coinbase_in.contains_key("txid_index"));
        assert!(!coinbase_in.contains_key("tio_index"));
    }

    #[test]
    fn annotate_is_idempotent_on_indexed_chains() {
        let dir = tempfile::tempdir().unwrap();
        let (_, step4) = run_steps_1_to_4(dir.path());
        let pairs = std::fs::read(&step4).unwrap();

        let mut once = Vec::new();
        annotate(
            Cursor::new(golden::enriched_jsonl()),
            Cursor::new(pairs.clone()),
            &mut once,
        )
        .unwrap();
        let mut twice = Vec::new();
        annotate(Cursor::new(once.clone()), Cursor::new(pairs), &mut twice).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn strip_recovers_the_enriched_chain() {
        let dir = tempfile::tempdir().unwrap();
        let (_, step4) = run_steps_1_to_4(dir.path());
        let pairs = std::fs::read(&step4).unwrap();
        let mut indexed = Vec::new();
        annotate(
            Cursor::new(golden::enriched_jsonl()),
            Cursor::new(pairs),
            &mut indexed,
        )
        .unwrap();
        let mut stripped = Vec::new();
        strip_index_fields(Cursor::new(indexed), &mut stripped).unwrap();
        assert_eq!(
            String::from_utf8(stripped).unwrap(),
            golden::enriched_jsonl()
        );
    }

    #[test]
    fn annotation_misalignment_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, step4) = run_steps_1_to_4(dir.path());
        let pairs = std::fs::read_to_string(&step4).unwrap();

        // Truncated stream: runs out before the traversal does.
        let truncated: String = pairs.lines().take(10).map(|l| format!("{l}\n")).collect();
        let err = annotate(
            Cursor::new(golden::enriched_jsonl()),
            Cursor::new(truncated),
            &mut Vec::new(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Alignment(_)), "got {err}");

        // Oversized stream: leftover pairs after the chain ends.
        let extended = format!("{pairs}36 9\n");
        let err = annotate(
            Cursor::new(golden::enriched_jsonl()),
            Cursor::new(extended),
            &mut Vec::new(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Alignment(_)), "got {err}");
    }

    #[test]
    fn index_chain_end_to_end_with_intermediates() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("chain.jsonl");
        std::fs::write(&input, golden::enriched_jsonl()).unwrap();
        let output = dir.path().join("indexed.jsonl");
        let tmp = dir.path().join("tmp");
        let b = SortBudget::new(1 << 20, &tmp);

        let stats = index_chain(&input, &output, &b, true, false).unwrap();
        assert_eq!(stats.walk.occurrences, 36);
        assert_eq!(stats.addresses, 6);
        assert_eq!(stats.annotations, 36);
        assert!(tmp.join("chain.jsonl.step4").exists());

        let stats2 = index_chain(&input, &output, &b, false, false).unwrap();
        assert_eq!(stats2.annotations, 36);
        assert!(!tmp.join("chain.jsonl.step4").exists());
    }
}
