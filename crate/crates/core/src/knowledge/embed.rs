use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

/// Word embedding table ingested from a text file. All vectors share one
/// dimension; the table is immutable after load.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Load a table in the text format `count dimension` header followed by
    /// `word v1 .. vd` rows, space-delimited. Files ending in `.gz` are
    /// transparently decompressed. With a `filter`, only listed words load.
    pub fn load(path: impl AsRef<Path>, filter: Option<&HashSet<String>>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
            Box::new(GzDecoder::new(file))
        } else {
            Box::new(file)
        };
        Self::read(BufReader::new(reader), &path.display().to_string(), filter)
    }

    fn read(
        reader: impl BufRead,
        path: &str,
        filter: Option<&HashSet<String>>,
    ) -> Result<Self> {
        let line_err = |line: usize, message: String| Error::ParseLine {
            path: path.to_string(),
            line,
            message,
        };
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => return Err(line_err(1, "empty embedding file".to_string())),
        };
        let dim = parse_header(&header)
            .ok_or_else(|| line_err(1, format!("header must be `count dimension`, got {header:?}")))?;
        let mut vectors = HashMap::new();
        for (idx, line) in lines {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_ascii_whitespace();
            let word = parts
                .next()
                .ok_or_else(|| line_err(lineno, "missing word".to_string()))?;
            if let Some(keep) = filter {
                if !keep.contains(word) {
                    continue;
                }
            }
            let values: std::result::Result<Vec<f64>, _> =
                parts.map(|p| p.parse::<f64>()).collect();
            let values = values.map_err(|e| line_err(lineno, format!("bad number: {e}")))?;
            if values.len() != dim {
                return Err(line_err(
                    lineno,
                    format!("expected {dim} values, found {}", values.len()),
                ));
            }
            vectors.insert(word.to_string(), values);
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    /// Build directly from entries (synthetic tables, tests).
    pub fn from_entries(dim: usize, entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut vectors = HashMap::new();
        for (word, v) in entries {
            if v.len() != dim {
                return Err(Error::contract(format!(
                    "embedding for {word:?} has {} values, expected {dim}",
                    v.len()
                )));
            }
            vectors.insert(word, v);
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }
}

/// `count dimension` header; the count is informational (filters may drop rows).
fn parse_header(line: &str) -> Option<usize> {
    let mut parts = line.split_ascii_whitespace();
    let _count: u64 = parts.next()?.parse().ok()?;
    let dim: usize = parts.next()?.parse().ok()?;
    (dim > 0 && parts.next().is_none()).then_some(dim)
}
