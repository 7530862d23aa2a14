//! On-disk, content-addressed embedding cache with LRU eviction.
//!
//! Layout under the cache root:
//!
//! ```text
//! index.json          key -> blob file, size, timestamps
//! blobs/<sha256>.bin  embedding bytes
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::volume::{Axis, Digest, WindowLevel};

/// Default byte budget: 2 GiB.
pub const DEFAULT_BUDGET: u64 = 2 << 30;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingKey {
    pub volume_digest: Digest,
    pub axis: Axis,
    pub slice_index: usize,
    pub predictor_id: String,
    /// Rendering window; `None` for the volume's default mapping.
    pub window: Option<WindowLevel>,
}

impl EmbeddingKey {
    fn window_bits(&self) -> Option<(f64, f64)> {
        self.window.map(|w| (w.window, w.level))
    }
}

impl PartialEq for EmbeddingKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for EmbeddingKey {}

impl PartialOrd for EmbeddingKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EmbeddingKey {
    fn cmp(&self, other: &Self) -> Ordering {
        let win = |a: Option<(f64, f64)>, b: Option<(f64, f64)>| match (a, b) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(x), Some(y)) => x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)),
        };
        self.volume_digest
            .0
            .cmp(&other.volume_digest.0)
            .then(self.axis.index().cmp(&other.axis.index()))
            .then(self.slice_index.cmp(&other.slice_index))
            .then_with(|| self.predictor_id.cmp(&other.predictor_id))
            .then_with(|| win(self.window_bits(), other.window_bits()))
    }
}

impl std::hash::Hash for EmbeddingKey {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.volume_digest.0.hash(state);
        self.axis.index().hash(state);
        self.slice_index.hash(state);
        self.predictor_id.hash(state);
        if let Some((w, l)) = self.window_bits() {
            w.to_bits().hash(state);
            l.to_bits().hash(state);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingEntry {
    pub key: EmbeddingKey,
    pub blob: Vec<u8>,
    pub byte_size: u64,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexRecord {
    key: EmbeddingKey,
    file: String,
    byte_size: u64,
    created_at: u64,
    last_used: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
    pub budget: u64,
    pub hits: u64,
    pub misses: u64,
    pub computes: u64,
}

/// What a garbage collection pass removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcReport {
    /// Entries evicted to meet the budget.
    pub evicted: usize,
    /// Entries whose blob file had disappeared.
    pub missing: usize,
    /// Blob files no entry referenced.
    pub orphans: usize,
}

#[derive(Default)]
struct Index {
    records: BTreeMap<EmbeddingKey, IndexRecord>,
    clock: u64,
}

impl Index {
    fn unique_bytes(&self) -> u64 {
        let mut seen = HashSet::new();
        self.records
            .values()
            .filter(|r| seen.insert(r.file.as_str()))
            .map(|r| r.byte_size)
            .sum()
    }

    fn references(&self, file: &str) -> bool {
        self.records.values().any(|r| r.file == file)
    }
}

pub struct EmbeddingCache {
    root: PathBuf,
    budget: u64,
    index: Mutex<Index>,
    inflight: Mutex<HashMap<EmbeddingKey, Arc<Mutex<()>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
    computes: AtomicU64,
}

fn io_err(what: &str, path: &Path, e: std::io::Error) -> Error {
    Error::CacheIo(format!("{what} {}: {e}", path.display()))
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Digest(Sha256::digest(bytes).into()).to_hex()
}

impl EmbeddingCache {
    /// Opens (or creates) a cache rooted at `root`. An unreadable index is
    /// logged and replaced by an empty one.
    pub fn open(root: impl Into<PathBuf>, budget: u64) -> Result<Self> {
        let root = root.into();
        let blobs = root.join("blobs");
        fs::create_dir_all(&blobs).map_err(|e| io_err("creating", &blobs, e))?;
        let mut index = Index::default();
        let index_path = root.join("index.json");
        match fs::read(&index_path) {
            Ok(bytes) => match serde_json::from_slice::<Vec<IndexRecord>>(&bytes) {
                Ok(records) => {
                    index.clock = records.iter().map(|r| r.last_used).max().unwrap_or(0);
                    index.records = records.into_iter().map(|r| (r.key.clone(), r)).collect();
                }
                Err(e) => log::warn!("ignoring unreadable cache index {}: {e}", index_path.display()),
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err("reading", &index_path, e)),
        }
        Ok(EmbeddingCache {
            root,
            budget,
            index: Mutex::new(index),
            inflight: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            computes: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    fn blob_path(&self, file: &str) -> PathBuf {
        self.root.join("blobs").join(format!("{file}.bin"))
    }

    fn save_index(&self, index: &Index) -> Result<()> {
        let records: Vec<&IndexRecord> = index.records.values().collect();
        let bytes = serde_json::to_vec_pretty(&records).map_err(|e| Error::CacheIo(e.to_string()))?;
        let path = self.root.join("index.json");
        write_atomic(&path, &bytes).map_err(|e| io_err("writing", &path, e))
    }

    /// Looks up `key`, refreshing its recency. A missing or corrupted blob
    /// file drops the entry and reads as a miss.
    pub fn get(&self, key: &EmbeddingKey) -> Result<Option<EmbeddingEntry>> {
        let mut index = self.index.lock();
        let Some(rec) = index.records.get(key).cloned() else {
            return Ok(None);
        };
        let path = self.blob_path(&rec.file);
        let blob = match fs::read(&path) {
            Ok(b) if sha256_hex(&b) == rec.file => b,
            Ok(_) | Err(_) => {
                log::warn!("dropping cache entry with missing or corrupt blob {}", path.display());
                index.records.remove(key);
                self.save_index(&index)?;
                return Ok(None);
            }
        };
        index.clock += 1;
        let clock = index.clock;
        if let Some(r) = index.records.get_mut(key) {
            r.last_used = clock;
        }
        Ok(Some(EmbeddingEntry {
            key: key.clone(),
            byte_size: blob.len() as u64,
            blob,
            created_at: rec.created_at,
        }))
    }

    /// Stores `blob` under `key`, then evicts least recently used entries
    /// (other than this one) until the cache fits its budget.
    pub fn insert(&self, key: EmbeddingKey, blob: &[u8]) -> Result<EmbeddingEntry> {
        let file = sha256_hex(blob);
        let path = self.blob_path(&file);
        if !path.exists() {
            write_atomic(&path, blob).map_err(|e| io_err("writing", &path, e))?;
        }
        let mut index = self.index.lock();
        index.clock += 1;
        let created_at = now_secs();
        let rec = IndexRecord {
            key: key.clone(),
            file,
            byte_size: blob.len() as u64,
            created_at,
            last_used: index.clock,
        };
        index.records.insert(key.clone(), rec);
        self.evict(&mut index, self.budget, Some(&key))?;
        self.save_index(&index)?;
        Ok(EmbeddingEntry {
            key,
            blob: blob.to_vec(),
            byte_size: blob.len() as u64,
            created_at,
        })
    }

    fn evict(&self, index: &mut Index, budget: u64, keep: Option<&EmbeddingKey>) -> Result<usize> {
        let mut removed = 0;
        while index.unique_bytes() > budget {
            let victim = index
                .records
                .values()
                .filter(|r| Some(&r.key) != keep)
                .min_by(|a, b| a.last_used.cmp(&b.last_used).then_with(|| a.key.cmp(&b.key)))
                .map(|r| r.key.clone());
            let Some(victim) = victim else { break };
            let rec = index.records.remove(&victim).expect("victim is indexed");
            if !index.references(&rec.file) {
                let path = self.blob_path(&rec.file);
                if let Err(e) = fs::remove_file(&path) {
                    if e.kind() != std::io::ErrorKind::NotFound {
                        return Err(io_err("removing", &path, e));
                    }
                }
            }
            removed += 1;
        }
        Ok(removed)
    }

    /// Returns the cached embedding for `key`, computing and storing it if
    /// absent. Concurrent callers for the same key compute it once.
    pub fn ensure(&self, key: &EmbeddingKey, compute: impl FnOnce() -> Result<Vec<u8>>) -> Result<EmbeddingEntry> {
        if let Some(e) = self.get(key)? {
            self.hits.fetch_add(1, AtomicOrdering::Relaxed);
            return Ok(e);
        }
        let gate = self.inflight.lock().entry(key.clone()).or_default().clone();
        let _held = gate.lock();
        if let Some(e) = self.get(key)? {
            self.hits.fetch_add(1, AtomicOrdering::Relaxed);
            return Ok(e);
        }
        self.misses.fetch_add(1, AtomicOrdering::Relaxed);
        self.computes.fetch_add(1, AtomicOrdering::Relaxed);
        let result = compute().and_then(|blob| self.insert(key.clone(), &blob));
        self.inflight.lock().remove(key);
        result
    }

    pub fn stats(&self) -> CacheStats {
        let index = self.index.lock();
        CacheStats {
            entries: index.records.len(),
            bytes: index.unique_bytes(),
            budget: self.budget,
            hits: self.hits.load(AtomicOrdering::Relaxed),
            misses: self.misses.load(AtomicOrdering::Relaxed),
            computes: self.computes.load(AtomicOrdering::Relaxed),
        }
    }

    /// Drops entries whose blobs are gone, evicts least recently used
    /// entries down to `budget` (the configured budget by default) and
    /// deletes unreferenced blob files.
    pub fn gc(&self, budget: Option<u64>) -> Result<GcReport> {
        let mut index = self.index.lock();
        let before = index.records.len();
        index.records.retain(|_, r| self.blob_path(&r.file).exists());
        let missing = before - index.records.len();
        let evicted = self.evict(&mut index, budget.unwrap_or(self.budget), None)?;
        let mut orphans = 0;
        let blobs = self.root.join("blobs");
        let listing = fs::read_dir(&blobs).map_err(|e| io_err("listing", &blobs, e))?;
        for entry in listing {
            let entry = entry.map_err(|e| io_err("listing", &blobs, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let stem = name.strip_suffix(".bin").unwrap_or(&name);
            if !index.references(stem) {
                fs::remove_file(entry.path()).map_err(|e| io_err("removing", &entry.path(), e))?;
                orphans += 1;
            }
        }
        self.save_index(&index)?;
        Ok(GcReport {
            evicted,
            missing,
            orphans,
        })
    }

    /// Removes every entry and blob.
    pub fn clear(&self) -> Result<usize> {
        let mut index = self.index.lock();
        let n = index.records.len();
        index.records.clear();
        let blobs = self.root.join("blobs");
        fs::remove_dir_all(&blobs).map_err(|e| io_err("removing", &blobs, e))?;
        fs::create_dir_all(&blobs).map_err(|e| io_err("creating", &blobs, e))?;
        self.save_index(&index)?;
        Ok(n)
    }
}
