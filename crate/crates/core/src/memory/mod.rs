//! Memory of `(input, intermediate rule)` pairs with nearest-neighbour
//! retrieval over embeddings.
//!
//! Entries older than the last rebuild live in a [`KdTree`]; newer ones sit
//! in an unindexed tail that is scanned linearly until 64 of them accumulate.
//! FIFO eviction only ever removes the oldest keys, so the tree skips evicted
//! points with a key floor instead of being rebuilt.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rule::{Instance, Rule};

mod embed;
pub mod kdtree;

pub use embed::{Embedder, Similarity};
use kdtree::{closer, dist2, KdTree};

pub const REBUILD_EVERY: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    #[serde(rename = "emb")]
    pub embedding: Vec<f64>,
    #[serde(rename = "x")]
    pub instance: Instance,
    #[serde(rename = "rule")]
    pub mid_rule: Rule,
    #[serde(rename = "idx")]
    pub insertion_index: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct Match<'a> {
    pub entry: &'a MemoryEntry,
    pub distance: f64,
    pub similarity: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    schema_hash: String,
    count: usize,
}

#[derive(Debug, Clone)]
pub struct MemoryStore {
    dim: usize,
    schema_hash: String,
    capacity: Option<usize>,
    similarity: Similarity,
    entries: VecDeque<MemoryEntry>,
    tree: KdTree,
    /// Entries with `insertion_index >= indexed_below` are not in the tree.
    indexed_below: u64,
    next_index: u64,
}

impl MemoryStore {
    pub fn new(dim: usize, schema_hash: impl Into<String>) -> Self {
        MemoryStore {
            dim,
            schema_hash: schema_hash.into(),
            capacity: None,
            similarity: Similarity::default(),
            entries: VecDeque::new(),
            tree: KdTree::default(),
            indexed_below: 0,
            next_index: 0,
        }
    }

    pub fn with_capacity(mut self, capacity: Option<usize>) -> Self {
        self.capacity = capacity;
        self.enforce_capacity();
        self
    }

    pub fn with_similarity(mut self, similarity: Similarity) -> Self {
        self.similarity = similarity;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn schema_hash(&self) -> &str {
        &self.schema_hash
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn similarity(&self) -> Similarity {
        self.similarity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    pub fn get(&self, insertion_index: u64) -> Option<&MemoryEntry> {
        let front = self.entries.front()?.insertion_index;
        // Insertion indices are contiguous from the oldest live entry.
        let pos = insertion_index.checked_sub(front)? as usize;
        self.entries.get(pos)
    }

    /// Appends `(x, rule)` under `embedding`. `rule` must cover `x`.
    pub fn insert(&mut self, embedding: Vec<f64>, x: Instance, rule: Rule) -> Result<u64> {
        self.check_dim(&embedding)?;
        if !rule.evaluate(&x, x.arity())? {
            return Err(Error::Precondition(format!("rule {rule} does not cover {x}")));
        }
        let idx = self.next_index;
        self.next_index += 1;
        self.entries.push_back(MemoryEntry { embedding, instance: x, mid_rule: rule, insertion_index: idx });
        self.enforce_capacity();
        if (self.next_index - self.indexed_below) as usize >= REBUILD_EVERY {
            self.rebuild();
        }
        Ok(idx)
    }

    fn enforce_capacity(&mut self) {
        if let Some(cap) = self.capacity {
            while self.entries.len() > cap {
                self.entries.pop_front();
            }
        }
    }

    fn rebuild(&mut self) {
        self.tree = KdTree::build(self.dim, self.entries.iter().map(|e| (e.insertion_index, e.embedding.clone())));
        self.indexed_below = self.next_index;
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Store(format!("embedding dimension {} in a store of dimension {}", v.len(), self.dim)));
        }
        Ok(())
    }

    /// Nearest entry by Euclidean distance; ties go to the oldest entry.
    pub fn find_most_similar(&self, embedding: &[f64]) -> Result<Option<Match<'_>>> {
        self.check_dim(embedding)?;
        let Some(front) = self.entries.front() else {
            return Ok(None);
        };
        let mut best = self.tree.nearest(embedding, front.insertion_index);
        let tail_start = self.indexed_below.saturating_sub(front.insertion_index) as usize;
        for e in self.entries.range(tail_start.min(self.entries.len())..) {
            let c = (dist2(embedding, &e.embedding), e.insertion_index);
            if best.is_none_or(|b| closer(c, b)) {
                best = Some(c);
            }
        }
        Ok(best.map(|(d2, key)| {
            let distance = d2.sqrt();
            Match {
                entry: self.get(key).expect("indexed key is live"),
                distance,
                similarity: self.similarity.of_distance(distance),
            }
        }))
    }

    /// Exhaustive scan; the reference the tree is checked against.
    pub fn linear_scan(&self, embedding: &[f64]) -> Option<&MemoryEntry> {
        let mut best: Option<(f64, u64, &MemoryEntry)> = None;
        for e in &self.entries {
            let c = (dist2(embedding, &e.embedding), e.insertion_index);
            if best.is_none_or(|(d, k, _)| closer(c, (d, k))) {
                best = Some((c.0, c.1, e));
            }
        }
        best.map(|b| b.2)
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header { dim: self.dim, schema_hash: self.schema_hash.clone(), count: self.len() };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, dim: usize, schema_hash: &str) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?), dim, schema_hash)
    }

    /// Reads a persisted store, checking it against the expected dimension and
    /// schema hash.
    pub fn read_from(r: impl BufRead, dim: usize, schema_hash: &str) -> Result<Self> {
        let mut lines = r.lines();
        let header: Header = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::Store("memory file is empty".into())),
        };
        if header.schema_hash != schema_hash {
            return Err(Error::IncompatibleMemory(format!(
                "schema hash {} does not match {schema_hash}",
                header.schema_hash
            )));
        }
        if header.dim != dim {
            return Err(Error::IncompatibleMemory(format!("dimension {} does not match {dim}", header.dim)));
        }
        let mut store = MemoryStore::new(dim, schema_hash);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: MemoryEntry = serde_json::from_str(&line)?;
            store.check_dim(&e.embedding)?;
            if store.entries.back().is_some_and(|b| e.insertion_index != b.insertion_index + 1) {
                return Err(Error::Store(format!("entry index {} breaks the insertion sequence", e.insertion_index)));
            }
            store.next_index = e.insertion_index + 1;
            store.entries.push_back(e);
        }
        if store.entries.len() != header.count {
            return Err(Error::Store(format!("header declares {} entries, found {}", header.count, store.len())));
        }
        store.rebuild();
        Ok(store)
    }
}
