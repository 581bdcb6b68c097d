//! Persistent FAQ store with exact cosine search.
//!
//! Entries live in memory behind a read-write lock; embeddings are unit
//! vectors so a search is a dot-product scan. A store opened on a snapshot
//! path writes the whole snapshot after every mutation (temp file + rename).
//! CSV is the interchange format and carries everything but embeddings.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use faqassist_core::dedup::similarity;
use faqassist_core::vector::Vector;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbedError, Embedder};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TAG_DEDUP_THRESHOLD: f64 = 0.95;
pub const CSV_HEADER: [&str; 7] = ["qid", "question", "answer", "frequency", "source", "created_at", "updated_at"];

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no FAQ entry with qid {0}")]
    NotFound(String),
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("answer text is empty")]
    EmptyAnswer,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query has {found} dims, store expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("snapshot format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("entries were embedded by {expected}, not {found}")]
    EmbedderMismatch { expected: String, found: String },
    #[error("csv: {0}")]
    Csv(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Mined,
    RuntimeTagged,
    Supervisor,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Mined => "mined",
            Source::RuntimeTagged => "runtime_tagged",
            Source::Supervisor => "supervisor",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "mined" => Ok(Source::Mined),
            "runtime_tagged" => Ok(Source::RuntimeTagged),
            "supervisor" => Ok(Source::Supervisor),
            other => Err(format!("unknown source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaqEntry {
    pub qid: String,
    pub question: String,
    pub answer: Option<String>,
    pub frequency: u64,
    pub source: Source,
    pub embedding: Vector,
    /// Milliseconds since the epoch.
    pub created_at: i64,
    pub updated_at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaqMatch {
    pub qid: String,
    pub question: String,
    pub score: f64,
}

/// Fields for [`FaqStore::upsert`]. On update, `None` leaves the stored
/// value alone; an empty `answer` clears it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntryFields {
    pub qid: Option<String>,
    pub question: String,
    pub answer: Option<String>,
    pub frequency: Option<u64>,
    pub source: Option<Source>,
}

impl EntryFields {
    pub fn question(q: impl Into<String>) -> Self {
        Self {
            question: q.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoreConfig {
    pub dim: usize,
    /// Runtime tags closer than this (cosine) to an existing entry merge
    /// into it.
    pub dedup_threshold: f64,
}

impl StoreConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            dedup_threshold: DEFAULT_TAG_DEDUP_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagOutcome {
    pub qid: String,
    /// True when the question merged into an existing near-duplicate.
    pub merged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportReport {
    pub imported: usize,
    pub malformed: Vec<MalformedRow>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotEntry {
    qid: String,
    question: String,
    answer: Option<String>,
    frequency: u64,
    source: Source,
    embedding: Vec<f64>,
    created_at: i64,
    updated_at: i64,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format_version: u32,
    dim: usize,
    entries: Vec<SnapshotEntry>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

pub fn now_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64)
}

fn mint_qid(prefix: char) -> String {
    let id = uuid::Uuid::new_v4().simple().to_string();
    format!("{prefix}{}", &id[..8])
}

pub struct FaqStore {
    config: StoreConfig,
    embedder: Arc<dyn Embedder>,
    entries: RwLock<BTreeMap<String, FaqEntry>>,
    snapshot_path: Option<PathBuf>,
    persist_lock: Mutex<()>,
}

impl fmt::Debug for FaqStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FaqStore")
            .field("config", &self.config)
            .field("entries", &self.len())
            .field("snapshot_path", &self.snapshot_path)
            .finish()
    }
}

impl FaqStore {
    pub fn in_memory(config: StoreConfig, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            config,
            embedder,
            entries: RwLock::new(BTreeMap::new()),
            snapshot_path: None,
            persist_lock: Mutex::new(()),
        }
    }

    /// Loads `path` if it exists and keeps it as the autosave target.
    pub fn open(path: impl Into<PathBuf>, config: StoreConfig, embedder: Arc<dyn Embedder>) -> Result<Self, StoreError> {
        let path = path.into();
        let mut store = if path.exists() {
            Self::load(&path, config, embedder)?
        } else {
            Self::in_memory(config, embedder)
        };
        store.snapshot_path = Some(path);
        Ok(store)
    }

    /// Reads a snapshot without binding the store to it.
    pub fn load(path: &Path, config: StoreConfig, embedder: Arc<dyn Embedder>) -> Result<Self, StoreError> {
        let raw = std::fs::read(path).map_err(io_err(path))?;
        let probe: VersionProbe = serde_json::from_slice(&raw).map_err(|e| StoreError::CorruptSnapshot(e.to_string()))?;
        if probe.format_version != SNAPSHOT_FORMAT_VERSION {
            return Err(StoreError::VersionMismatch {
                found: probe.format_version,
                expected: SNAPSHOT_FORMAT_VERSION,
            });
        }
        let snap: Snapshot = serde_json::from_slice(&raw).map_err(|e| StoreError::CorruptSnapshot(e.to_string()))?;
        if snap.dim != config.dim {
            return Err(StoreError::DimMismatch {
                expected: config.dim,
                found: snap.dim,
            });
        }
        let mut entries = BTreeMap::new();
        for e in snap.entries {
            if e.embedding.len() != config.dim {
                return Err(StoreError::CorruptSnapshot(format!(
                    "entry {} has {} dims",
                    e.qid,
                    e.embedding.len()
                )));
            }
            let embedding = Vector::new(e.embedding).map_err(|err| StoreError::CorruptSnapshot(err.to_string()))?;
            entries.insert(
                e.qid.clone(),
                FaqEntry {
                    qid: e.qid,
                    question: e.question,
                    answer: e.answer,
                    frequency: e.frequency,
                    source: e.source,
                    embedding,
                    created_at: e.created_at,
                    updated_at: e.updated_at,
                },
            );
        }
        let store = Self::in_memory(config, embedder);
        *store.entries.write() = entries;
        Ok(store)
    }

    /// Writes a consistent snapshot of the current entries to `path`.
    pub fn persist(&self, path: &Path) -> Result<(), StoreError> {
        let snap = Snapshot {
            format_version: SNAPSHOT_FORMAT_VERSION,
            dim: self.config.dim,
            entries: self
                .entries
                .read()
                .values()
                .map(|e| SnapshotEntry {
                    qid: e.qid.clone(),
                    question: e.question.clone(),
                    answer: e.answer.clone(),
                    frequency: e.frequency,
                    source: e.source,
                    embedding: e.embedding.as_slice().to_vec(),
                    created_at: e.created_at,
                    updated_at: e.updated_at,
                })
                .collect(),
        };
        let bytes = serde_json::to_vec(&snap).map_err(|e| StoreError::CorruptSnapshot(e.to_string()))?;
        let _guard = self.persist_lock.lock();
        write_atomic(path, &bytes)
    }

    fn autosave(&self) -> Result<(), StoreError> {
        match &self.snapshot_path {
            Some(p) => self.persist(p),
            None => Ok(()),
        }
    }

    /// An unbound in-memory copy sharing the embedder.
    pub fn fork(&self) -> Self {
        let copy = Self::in_memory(self.config, self.embedder.clone());
        *copy.entries.write() = self.entries.read().clone();
        copy
    }

    /// An unbound copy that embeds new text with `embedder`, which must
    /// produce the same vectors as the current one.
    pub fn fork_with_embedder(&self, embedder: Arc<dyn Embedder>) -> Result<Self, StoreError> {
        if embedder.dim() != self.config.dim {
            return Err(StoreError::DimMismatch {
                expected: self.config.dim,
                found: embedder.dim(),
            });
        }
        if embedder.fingerprint() != self.embedder.fingerprint() {
            return Err(StoreError::EmbedderMismatch {
                expected: self.embedder.fingerprint(),
                found: embedder.fingerprint(),
            });
        }
        let copy = Self::in_memory(self.config, embedder);
        *copy.entries.write() = self.entries.read().clone();
        Ok(copy)
    }

    pub fn config(&self) -> StoreConfig {
        self.config
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, qid: &str) -> Result<FaqEntry, StoreError> {
        self.entries
            .read()
            .get(qid)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(qid.to_string()))
    }

    /// All entries ordered by qid.
    pub fn entries(&self) -> Vec<FaqEntry> {
        self.entries.read().values().cloned().collect()
    }

    /// One page of entries ordered by qid, plus the total matching count.
    pub fn list(&self, offset: usize, limit: usize, answerless_only: bool) -> (usize, Vec<FaqEntry>) {
        let guard = self.entries.read();
        let matching = guard.values().filter(|e| !answerless_only || e.answer.is_none());
        let total = matching.clone().count();
        (total, matching.skip(offset).take(limit).cloned().collect())
    }

    /// Creates an entry (minting a qid when none is given) or updates one.
    /// The embedding is recomputed only when the question text changes.
    pub async fn upsert(&self, fields: EntryFields) -> Result<String, StoreError> {
        let question = fields.question.trim().to_string();
        if question.is_empty() {
            return Err(StoreError::EmptyQuestion);
        }
        let existing_question = fields
            .qid
            .as_deref()
            .and_then(|q| self.entries.read().get(q).map(|e| e.question.clone()));
        let mut fresh = if existing_question.as_deref() == Some(question.as_str()) {
            None
        } else {
            Some(self.embed_checked(&question).await?)
        };

        let qid = loop {
            match self.apply_upsert(&fields, &question, &mut fresh) {
                Some(qid) => break qid,
                // The stored question differs from the one embedded (or the
                // entry vanished); embed and retry.
                None => fresh = Some(self.embed_checked(&question).await?),
            }
        };
        self.autosave()?;
        Ok(qid)
    }

    /// Applies `fields` under the write lock. `None` means an embedding of
    /// `question` is needed first.
    fn apply_upsert(&self, fields: &EntryFields, question: &str, fresh: &mut Option<Vector>) -> Option<String> {
        let mut guard = self.entries.write();
        let now = now_ms();
        let answer = fields.answer.as_ref().map(|a| a.trim().to_string());
        match fields.qid.as_ref().and_then(|q| guard.get_mut(q)) {
            Some(entry) => {
                if entry.question != question {
                    entry.embedding = fresh.take()?;
                    entry.question = question.to_string();
                }
                if let Some(a) = answer {
                    entry.answer = (!a.is_empty()).then_some(a);
                }
                if let Some(f) = fields.frequency {
                    entry.frequency = f;
                }
                if let Some(s) = fields.source {
                    entry.source = s;
                }
                entry.updated_at = now.max(entry.updated_at);
                Some(entry.qid.clone())
            }
            None => {
                let embedding = fresh.take()?;
                let qid = match &fields.qid {
                    Some(q) => q.clone(),
                    None => loop {
                        let q = mint_qid('S');
                        if !guard.contains_key(&q) {
                            break q;
                        }
                    },
                };
                guard.insert(
                    qid.clone(),
                    FaqEntry {
                        qid: qid.clone(),
                        question: question.to_string(),
                        answer: answer.filter(|a| !a.is_empty()),
                        frequency: fields.frequency.unwrap_or(0),
                        source: fields.source.unwrap_or(Source::Supervisor),
                        embedding,
                        created_at: now,
                        updated_at: now,
                    },
                );
                Some(qid)
            }
        }
    }

    /// Stores an answer on an existing entry.
    pub fn set_answer(&self, qid: &str, answer: &str) -> Result<(), StoreError> {
        let answer = answer.trim();
        if answer.is_empty() {
            return Err(StoreError::EmptyAnswer);
        }
        {
            let mut guard = self.entries.write();
            let entry = guard.get_mut(qid).ok_or_else(|| StoreError::NotFound(qid.to_string()))?;
            entry.answer = Some(answer.to_string());
            entry.updated_at = now_ms().max(entry.updated_at);
        }
        self.autosave()
    }

    pub fn remove(&self, qid: &str) -> Result<bool, StoreError> {
        let removed = self.entries.write().remove(qid).is_some();
        if removed {
            self.autosave()?;
        }
        Ok(removed)
    }

    /// Stores an agent-tagged question. A question above the dedup threshold
    /// to an existing entry bumps that entry's frequency instead.
    pub async fn tag_runtime(&self, question: &str, answer: &str) -> Result<TagOutcome, StoreError> {
        let question = question.trim();
        let answer = answer.trim();
        if question.is_empty() {
            return Err(StoreError::EmptyQuestion);
        }
        if answer.is_empty() {
            return Err(StoreError::EmptyAnswer);
        }
        let embedding = self.embed_checked(question).await?;
        let outcome = {
            let mut guard = self.entries.write();
            let now = now_ms();
            let closest = guard
                .values()
                .map(|e| (similarity(&embedding, &e.embedding), &e.qid))
                .filter(|(s, _)| *s > self.config.dedup_threshold)
                .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(a.1)))
                .map(|(_, q)| q.clone());
            match closest {
                Some(qid) => {
                    let entry = guard.get_mut(&qid).expect("qid just seen");
                    entry.frequency += 1;
                    if entry.answer.is_none() {
                        entry.answer = Some(answer.to_string());
                    }
                    entry.updated_at = now.max(entry.updated_at);
                    TagOutcome { qid, merged: true }
                }
                None => {
                    let qid = loop {
                        let q = mint_qid('T');
                        if !guard.contains_key(&q) {
                            break q;
                        }
                    };
                    guard.insert(
                        qid.clone(),
                        FaqEntry {
                            qid: qid.clone(),
                            question: question.to_string(),
                            answer: Some(answer.to_string()),
                            frequency: 1,
                            source: Source::RuntimeTagged,
                            embedding,
                            created_at: now,
                            updated_at: now,
                        },
                    );
                    TagOutcome { qid, merged: false }
                }
            }
        };
        self.autosave()?;
        Ok(outcome)
    }

    /// Top `k` entries with cosine at least `min_score`, best first, qid
    /// ascending on ties.
    pub fn search(&self, query: &Vector, k: usize, min_score: f64) -> Result<Vec<FaqMatch>, StoreError> {
        self.search_where(query, k, min_score, |_| true)
    }

    /// [`FaqStore::search`] restricted to entries accepted by `keep`.
    pub fn search_where(
        &self,
        query: &Vector,
        k: usize,
        min_score: f64,
        keep: impl Fn(&FaqEntry) -> bool,
    ) -> Result<Vec<FaqMatch>, StoreError> {
        if k == 0 {
            return Err(StoreError::ZeroK);
        }
        if query.dim() != self.config.dim {
            return Err(StoreError::DimMismatch {
                expected: self.config.dim,
                found: query.dim(),
            });
        }
        let guard = self.entries.read();
        let mut scored: Vec<(f64, &FaqEntry)> = guard
            .values()
            .filter_map(|e| {
                let s = e.embedding.dot(query).ok()?;
                (s >= min_score && keep(e)).then_some((s, e))
            })
            .collect();
        scored.sort_by(|a, b| match b.0.total_cmp(&a.0) {
            Ordering::Equal => a.1.qid.cmp(&b.1.qid),
            o => o,
        });
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(score, e)| FaqMatch {
                qid: e.qid.clone(),
                question: e.question.clone(),
                score,
            })
            .collect())
    }

    async fn embed_checked(&self, text: &str) -> Result<Vector, StoreError> {
        let v = self.embedder.embed(text).await?;
        if v.dim() != self.config.dim {
            return Err(StoreError::DimMismatch {
                expected: self.config.dim,
                found: v.dim(),
            });
        }
        Ok(v)
    }

    pub fn export_csv(&self, path: &Path) -> Result<usize, StoreError> {
        let mut buf = Vec::new();
        let n = self.write_csv(&mut buf)?;
        write_atomic(path, &buf)?;
        Ok(n)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<usize, StoreError> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| StoreError::Csv(e.to_string());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        let entries = self.entries();
        for e in &entries {
            w.write_record([
                e.qid.as_str(),
                e.question.as_str(),
                e.answer.as_deref().unwrap_or(""),
                &e.frequency.to_string(),
                e.source.as_str(),
                &e.created_at.to_string(),
                &e.updated_at.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| StoreError::Csv(e.to_string()))?;
        Ok(entries.len())
    }

    pub async fn import_csv(&self, path: &Path) -> Result<ImportReport, StoreError> {
        let raw = std::fs::read(path).map_err(io_err(path))?;
        self.read_csv(raw.as_slice()).await
    }

    /// Upserts every well-formed row; malformed rows are reported by line
    /// and skipped. Timestamps in the file are kept.
    pub async fn read_csv<R: std::io::Read>(&self, input: R) -> Result<ImportReport, StoreError> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
        let mut report = ImportReport::default();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = match rec {
                Ok(r) => r,
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    report.malformed.push(MalformedRow {
                        line,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let line = rec.position().map_or(0, |p| p.line());
            match parse_row(&rec) {
                Ok(row) => rows.push(row),
                Err(reason) => report.malformed.push(MalformedRow { line, reason }),
            }
        }

        let questions: Vec<String> = rows.iter().map(|r| r.question.clone()).collect();
        let embeddings = self.embedder.embed_batch(&questions).await?;
        {
            let mut guard = self.entries.write();
            let now = now_ms();
            for (row, embedding) in rows.into_iter().zip(embeddings) {
                if embedding.dim() != self.config.dim {
                    return Err(StoreError::DimMismatch {
                        expected: self.config.dim,
                        found: embedding.dim(),
                    });
                }
                let qid = match row.qid {
                    Some(q) => q,
                    None => loop {
                        let q = mint_qid('S');
                        if !guard.contains_key(&q) {
                            break q;
                        }
                    },
                };
                let created_at = row.created_at.unwrap_or(now);
                guard.insert(
                    qid.clone(),
                    FaqEntry {
                        qid,
                        question: row.question,
                        answer: row.answer,
                        frequency: row.frequency,
                        source: row.source,
                        embedding,
                        created_at,
                        updated_at: row.updated_at.unwrap_or(created_at),
                    },
                );
                report.imported += 1;
            }
        }
        for m in &report.malformed {
            tracing::warn!(line = m.line, reason = %m.reason, "skipped malformed FAQ row");
        }
        self.autosave()?;
        Ok(report)
    }
}

struct CsvRow {
    qid: Option<String>,
    question: String,
    answer: Option<String>,
    frequency: u64,
    source: Source,
    created_at: Option<i64>,
    updated_at: Option<i64>,
}

fn parse_row(rec: &csv::StringRecord) -> Result<CsvRow, String> {
    let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
    let question = field(1);
    if question.is_empty() {
        return Err("missing question".into());
    }
    let opt_i64 = |i: usize, name: &str| -> Result<Option<i64>, String> {
        let v = field(i);
        if v.is_empty() {
            Ok(None)
        } else {
            v.parse().map(Some).map_err(|_| format!("bad {name} {v:?}"))
        }
    };
    let frequency = match field(3) {
        "" => 0,
        v => v.parse().map_err(|_| format!("bad frequency {v:?}"))?,
    };
    let source = match field(4) {
        "" => Source::Supervisor,
        v => v.parse()?,
    };
    Ok(CsvRow {
        qid: Some(field(0).to_string()).filter(|q| !q.is_empty()),
        question: question.to_string(),
        answer: Some(field(2).to_string()).filter(|a| !a.is_empty()),
        frequency,
        source,
        created_at: opt_i64(5, "created_at")?,
        updated_at: opt_i64(6, "updated_at")?,
    })
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}
