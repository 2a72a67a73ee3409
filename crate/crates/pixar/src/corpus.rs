//! Docid corpus and query-docid training pairs.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::{escape, unescape};

/// The docid corpus plus optional supervision.
///
/// `docids` keeps the list as ingested (duplicates included) because token
/// occurrence counting during vocabulary construction is frequency-weighted;
/// [`Corpus::unique_docids`] yields the deduplicated set used for the trie
/// and for relevance checks.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub docids: Vec<String>,
    pub pairs: Vec<(String, String)>,
}

impl Corpus {
    pub fn new(docids: Vec<String>) -> Result<Self> {
        for d in &docids {
            if d.is_empty() {
                return Err(Error::InvalidInput("empty docid in corpus".into()));
            }
        }
        Ok(Corpus {
            docids,
            pairs: Vec::new(),
        })
    }

    pub fn with_pairs(docids: Vec<String>, pairs: Vec<(String, String)>) -> Result<Self> {
        let mut corpus = Corpus::new(docids)?;
        let known: HashSet<&str> = corpus.docids.iter().map(String::as_str).collect();
        for (_, d) in &pairs {
            if !known.contains(d.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "training pair references docid not in corpus: {d:?}"
                )));
            }
        }
        corpus.pairs = pairs;
        Ok(corpus)
    }

    /// Deduplicated docids in lexicographic order: the set D.
    pub fn unique_docids(&self) -> Vec<&str> {
        let mut unique: Vec<&str> = self.docids.iter().map(String::as_str).collect();
        unique.sort_unstable();
        unique.dedup();
        unique
    }

    /// Load a one-docid-per-line file. Blank lines are skipped; fields use
    /// backslash escaping for tab/newline/backslash.
    pub fn load_docids(path: &Path) -> Result<Vec<String>> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut docids = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let docid = unescape(line).ok_or_else(|| {
                Error::format("docid file", path, format!("bad escape on line {}", lineno + 1))
            })?;
            docids.push(docid);
        }
        Ok(docids)
    }

    pub fn save_docids(path: &Path, docids: &[String]) -> Result<()> {
        let mut out = String::new();
        for d in docids {
            out.push_str(&escape(d));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Load a `query<TAB>docid` TSV of training pairs.
    pub fn load_pairs(path: &Path) -> Result<Vec<(String, String)>> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::format("pairs file", path, format!("{msg} on line {}", lineno + 1));
            let (q, d) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected query<TAB>docid"))?;
            let q = unescape(q).ok_or_else(|| bad("bad escape in query"))?;
            let d = unescape(d).ok_or_else(|| bad("bad escape in docid"))?;
            if d.is_empty() {
                return Err(bad("empty docid"));
            }
            pairs.push((q, d));
        }
        Ok(pairs)
    }

    pub fn save_pairs(path: &Path, pairs: &[(String, String)]) -> Result<()> {
        let mut out = String::new();
        for (q, d) in pairs {
            out.push_str(&escape(q));
            out.push('\t');
            out.push_str(&escape(d));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}
