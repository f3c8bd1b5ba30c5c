//! Entailment judgments keyed by ordered pairs of normalized-text hashes.
//!
//! File format, one entry per line, sorted by key:
//!
//! ```text
//! <hash_premise> <hash_hypothesis> <0|1>
//! ```
//!
//! Hashes are 64-character lowercase hex SHA-256 digests of the normalized
//! text. A missing file loads as an empty cache.

use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::clustering::{normalize_text, text_hash, EntailmentOracle};
use crate::error::{file_error, Error, Result};
use crate::harness::dataset::write_atomic;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntailmentCache {
    entries: BTreeMap<(String, String), bool>,
}

impl EntailmentCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reflexive pairs are always `true`.
    pub fn get(&self, premise_hash: &str, hypothesis_hash: &str) -> Option<bool> {
        if premise_hash == hypothesis_hash {
            return Some(true);
        }
        self.entries
            .get(&(premise_hash.to_string(), hypothesis_hash.to_string()))
            .copied()
    }

    pub fn get_texts(&self, premise: &str, hypothesis: &str) -> Option<bool> {
        self.get(&text_hash(premise), &text_hash(hypothesis))
    }

    /// Records a judgment unless the pair already has one. Returns whether the
    /// entry was added.
    pub fn insert(&mut self, premise_hash: String, hypothesis_hash: String, entails: bool) -> bool {
        use std::collections::btree_map::Entry;
        match self.entries.entry((premise_hash, hypothesis_hash)) {
            Entry::Vacant(v) => {
                v.insert(entails);
                true
            }
            Entry::Occupied(_) => false,
        }
    }

    pub fn insert_texts(&mut self, premise: &str, hypothesis: &str, entails: bool) -> bool {
        self.insert(text_hash(premise), text_hash(hypothesis), entails)
    }

    /// Adds every entry of `other` not already present.
    pub fn merge(&mut self, other: EntailmentCache) {
        for ((a, b), v) in other.entries {
            self.insert(a, b, v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, bool)> {
        self.entries
            .iter()
            .map(|((a, b), &v)| (a.as_str(), b.as_str(), v))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 132);
        for ((a, b), v) in &self.entries {
            out.push_str(a);
            out.push(' ');
            out.push_str(b);
            out.push_str(if *v { " 1\n" } else { " 0\n" });
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cache = EntailmentCache::new();
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            let line = raw.trim_end_matches(['\n', '\r']);
            let at = |reason: String| Error::CacheParse {
                path: path.to_path_buf(),
                offset,
                reason,
            };
            if !line.trim().is_empty() {
                let fields: Vec<&str> = line.split(' ').collect();
                if fields.len() != 3 {
                    return Err(at(format!("expected 3 fields, found {}", fields.len())));
                }
                for h in &fields[..2] {
                    if h.len() != 64
                        || !h
                            .bytes()
                            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
                    {
                        return Err(at(format!("`{h}` is not a hex SHA-256 digest")));
                    }
                }
                let v = match fields[2] {
                    "0" => false,
                    "1" => true,
                    other => return Err(at(format!("label `{other}` is not 0 or 1"))),
                };
                let (a, b) = (fields[0].to_string(), fields[1].to_string());
                if let Some(&prev) = cache.entries.get(&(a.clone(), b.clone())) {
                    if prev != v {
                        return Err(at("conflicting duplicate entry".into()));
                    }
                }
                cache.entries.insert((a, b), v);
            }
            offset += raw.len();
        }
        Ok(cache)
    }

    /// Loads a cache file; a missing file is an empty cache.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match fs::read_to_string(path) {
            Ok(text) => Self::parse(&text, path),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(file_error(path)(e)),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text().as_bytes())
    }
}

/// An oracle backed by a precomputed entailment table. Pairs absent from the
/// table are an oracle failure.
#[derive(Debug, Clone, Default)]
pub struct MatrixOracle {
    table: EntailmentCache,
}

impl MatrixOracle {
    pub fn new(table: EntailmentCache) -> Self {
        MatrixOracle { table }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Config(format!(
                "entailment matrix {} not found",
                path.display()
            )));
        }
        Ok(Self::new(EntailmentCache::load(path)?))
    }

    pub fn table(&self) -> &EntailmentCache {
        &self.table
    }
}

impl EntailmentOracle for MatrixOracle {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        self.table.get_texts(premise, hypothesis).ok_or_else(|| {
            Error::OracleFailure(format!(
                "entailment matrix has no entry for ({:?}, {:?})",
                normalize_text(premise),
                normalize_text(hypothesis)
            ))
        })
    }
}

/// Read-through cache in front of another oracle.
///
/// Lookups consult the shared, immutable `base` first, then a private buffer
/// of judgments made during this run. New judgments go only to the buffer;
/// [`CachedOracle::into_buffer`] hands them back for a single merge.
pub struct CachedOracle<'a> {
    inner: &'a dyn EntailmentOracle,
    base: &'a EntailmentCache,
    buffer: Mutex<EntailmentCache>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<'a> CachedOracle<'a> {
    pub fn new(inner: &'a dyn EntailmentOracle, base: &'a EntailmentCache) -> Self {
        CachedOracle {
            inner,
            base,
            buffer: Mutex::new(EntailmentCache::new()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    /// Lookups that reached the inner oracle.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn into_buffer(self) -> EntailmentCache {
        self.buffer.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

impl EntailmentOracle for CachedOracle<'_> {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        let (a, b) = (text_hash(premise), text_hash(hypothesis));
        let cached = self.base.get(&a, &b).or_else(|| {
            self.buffer
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .get(&a, &b)
        });
        if let Some(v) = cached {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = self.inner.entails(premise, hypothesis)?;
        self.buffer
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(a, b, v);
        Ok(v)
    }
}
