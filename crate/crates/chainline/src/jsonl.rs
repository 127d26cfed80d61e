//! Line-oriented input/output shared by all pipeline stages.
//!
//! Every stage reads and writes newline-delimited records (JSON objects or
//! space-delimited tuples). Inputs may be gzip-compressed; compression is
//! detected from the magic bytes, never from the file name.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use serde_json::Value;

use crate::error::{Error, Result};

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Opens `path` for buffered line reading, transparently decompressing gzip.
/// `None` reads from stdin.
pub fn open_input(path: Option<&Path>) -> Result<Box<dyn BufRead>> {
    let raw: Box<dyn Read> = match path {
        Some(p) => Box::new(File::open(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(io::stdin()),
    };
    let mut buffered = BufReader::new(raw);
    let head = buffered
        .fill_buf()
        .map_err(|e| Error::io(path.unwrap_or(Path::new("<stdin>")), e))?;
    if head.starts_with(&GZIP_MAGIC) {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(buffered))))
    } else {
        Ok(Box::new(buffered))
    }
}

/// Opens `path` for buffered writing; `None` writes to stdout.
/// With `gzip` set the output stream is gzip-compressed.
pub fn open_output(path: Option<&Path>, gzip: bool) -> Result<Box<dyn Write>> {
    let raw: Box<dyn Write> = match path {
        Some(p) => Box::new(File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(io::stdout()),
    };
    let buffered = BufWriter::new(raw);
    if gzip {
        Ok(Box::new(GzEncoder::new(buffered, flate2::Compression::default())))
    } else {
        Ok(Box::new(buffered))
    }
}

/// Iterator over the lines of a reader, tagged with 1-based line numbers.
pub struct Lines<R> {
    reader: R,
    next_no: u64,
    source: PathBuf,
}

impl<R: BufRead> Lines<R> {
    pub fn new(reader: R, source: impl Into<PathBuf>) -> Self {
        Lines {
            reader,
            next_no: 1,
            source: source.into(),
        }
    }
}

impl<R: BufRead> Iterator for Lines<R> {
    type Item = Result<(u64, String)>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => None,
            Ok(_) => {
                if line.ends_with('\n') {
                    line.pop();
                    if line.ends_with('\r') {
                        line.pop();
                    }
                }
                let no = self.next_no;
                self.next_no += 1;
                Some(Ok((no, line)))
            }
            Err(e) => Some(Err(Error::io(&self.source, e))),
        }
    }
}

/// Parses a JSON-lines stream into `serde_json::Value`s, one per line.
/// Blank lines are skipped.
pub fn json_values<R: BufRead>(
    reader: R,
    source: impl Into<PathBuf>,
) -> impl Iterator<Item = Result<Value>> {
    Lines::new(reader, source.into()).filter_map(|item| match item {
        Ok((_, line)) if line.trim().is_empty() => None,
        Ok((no, line)) => Some(
            serde_json::from_str(&line).map_err(|e| Error::json(format!("line {no}"), e)),
        ),
        Err(e) => Some(Err(e)),
    })
}

/// Writes one compact JSON value per line.
pub fn write_json_line<W: Write>(writer: &mut W, value: &Value) -> Result<()> {
    serde_json::to_writer(&mut *writer, value)
        .map_err(|e| Error::json("serializing record", e))?;
    writer
        .write_all(b"\n")
        .map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn gzip_detected_by_magic_bytes() {
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(b"{\"a\":1}\n{\"a\":2}\n").unwrap();
        let bytes = enc.finish().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.bin");
        std::fs::write(&path, &bytes).unwrap();

        let reader = open_input(Some(&path)).unwrap();
        let values: Vec<Value> = json_values(reader, &path).map(|v| v.unwrap()).collect();
        assert_eq!(values.len(), 2);
        assert_eq!(values[1]["a"], serde_json::json!(2));
    }

    #[test]
    fn line_numbers_reported_in_parse_errors() {
        let input = Cursor::new("{\"ok\":1}\nnot json\n");
        let err = json_values(input, "test")
            .collect::<Result<Vec<_>>>()
            .unwrap_err();
        assert!(err.to_string().contains("line 2"), "got: {err}");
    }

    #[test]
    fn plain_text_passes_through() {
        let input = Cursor::new("a\nb\r\nc");
        let lines: Vec<String> = Lines::new(input, "test")
            .map(|r| r.unwrap().1)
            .collect();
        assert_eq!(lines, vec!["a", "b", "c"]);
    }
}
