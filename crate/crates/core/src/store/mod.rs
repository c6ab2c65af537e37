//! Revisioned document store.
//!
//! Every saved version of a document is kept as a revision in a per-document
//! tree. Revisions are immutable and content-addressed, so two replicas that
//! hold the same set of revisions agree on everything, including which
//! revision is current. Persistence is an append-only JSON-lines log replayed
//! on open; the in-memory index is rebuilt from it.

mod log;
mod replicate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::canonical::{sha256_hex, to_canonical_json};
use crate::record::{Record, RecordMeta};
use crate::template::Template;
use crate::Timestamp;

pub use replicate::{
    replicate, Candidate, Change, ChangeBatch, ConflictReport, Policy, PushOutcome, Replica,
    ReplicationReport, Resolution,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("revision mismatch on {doc_id}: expected {expected}, current is {current}")]
    RevisionMismatch {
        doc_id: String,
        expected: RevLabel,
        current: RevLabel,
    },
    #[error("document not found: {0}")]
    NotFound(String),
    #[error("invalid document id: {0}")]
    InvalidDocId(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("peer unreachable: {0}")]
    PeerUnreachable(String),
    #[error("peer sent an invalid revision: {0}")]
    Corrupt(String),
    #[error("conflict on {0} is no longer pending")]
    NotPending(String),
    #[error("winner {0} is not one of the conflict candidates")]
    InvalidWinner(String),
}

/// Optional revision as shown in error messages.
#[derive(Debug, Clone, PartialEq)]
pub struct RevLabel(pub Option<Revision>);

impl fmt::Display for RevLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            Some(r) => write!(f, "{r}"),
            None => f.write_str("none"),
        }
    }
}

/// Revision identifier, written `<generation>-<hash>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Revision {
    pub generation: u64,
    pub hash: String,
}

impl fmt::Display for Revision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.generation, self.hash)
    }
}

impl FromStr for Revision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (generation, hash) = s.split_once('-').ok_or_else(|| format!("bad revision {s:?}"))?;
        let generation = generation.parse().map_err(|_| format!("bad revision {s:?}"))?;
        if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(format!("bad revision {s:?}"));
        }
        Ok(Revision {
            generation,
            hash: hash.to_string(),
        })
    }
}

impl Serialize for Revision {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Revision {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "content", rename_all = "snake_case")]
pub enum DocBody {
    Record(Record),
    Template(Template),
}

impl DocBody {
    pub fn doc_id(&self) -> String {
        match self {
            DocBody::Record(r) => record_doc_id(&r.meta.record_id),
            DocBody::Template(t) => template_doc_id(&t.id, t.version),
        }
    }

    pub fn as_record(&self) -> Option<&Record> {
        match self {
            DocBody::Record(r) => Some(r),
            DocBody::Template(_) => None,
        }
    }

    pub fn as_template(&self) -> Option<&Template> {
        match self {
            DocBody::Template(t) => Some(t),
            DocBody::Record(_) => None,
        }
    }
}

pub fn record_doc_id(record_id: &str) -> String {
    format!("record/{record_id}")
}

pub fn template_doc_id(template_id: &str, version: u32) -> String {
    format!("template/{template_id}/{version}")
}

/// Doc ids are `/`-separated segments of `[A-Za-z0-9_.-]`, so they double as
/// relative paths in the revision export.
pub fn check_doc_id(doc_id: &str) -> Result<(), StoreError> {
    let ok = !doc_id.is_empty()
        && doc_id.split('/').all(|seg| {
            !seg.is_empty()
                && seg != "."
                && seg != ".."
                && seg
                    .bytes()
                    .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
        });
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidDocId(doc_id.to_string()))
    }
}

/// How a merge revision came about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ResolutionNote {
    NewestWins,
    Manual { actor: String },
}

/// One immutable revision of a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionedDoc {
    pub doc_id: String,
    pub revision: Revision,
    pub parents: Vec<Revision>,
    pub tombstone: bool,
    pub last_modified: Timestamp,
    /// Replica that authored the content of this revision.
    pub replica: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<ResolutionNote>,
    /// SHA-256 of the canonical body bytes alone.
    pub content_hash: String,
    pub body: Option<DocBody>,
}

#[derive(Serialize)]
struct HashInput<'a> {
    content_hash: &'a str,
    last_modified: Timestamp,
    parents: &'a [Revision],
    replica: &'a str,
    resolution: &'a Option<ResolutionNote>,
    tombstone: bool,
}

pub fn content_hash(body: &Option<DocBody>) -> String {
    sha256_hex(&to_canonical_json(body))
}

impl RevisionedDoc {
    #[allow(clippy::too_many_arguments)]
    fn build(
        doc_id: &str,
        parents: Vec<Revision>,
        tombstone: bool,
        last_modified: Timestamp,
        replica: &str,
        resolution: Option<ResolutionNote>,
        content_hash: String,
        body: Option<DocBody>,
    ) -> RevisionedDoc {
        let generation = parents.iter().map(|p| p.generation).max().unwrap_or(0) + 1;
        let hash = sha256_hex(&to_canonical_json(&HashInput {
            content_hash: &content_hash,
            last_modified,
            parents: &parents,
            replica,
            resolution: &resolution,
            tombstone,
        }));
        RevisionedDoc {
            doc_id: doc_id.to_string(),
            revision: Revision { generation, hash },
            parents,
            tombstone,
            last_modified,
            replica: replica.to_string(),
            resolution,
            content_hash,
            body,
        }
    }

    /// Recompute both hashes; replicas refuse revisions that fail this.
    pub fn verify(&self) -> Result<(), StoreError> {
        let expected = RevisionedDoc::build(
            &self.doc_id,
            self.parents.clone(),
            self.tombstone,
            self.last_modified,
            &self.replica,
            self.resolution.clone(),
            content_hash(&self.body),
            None,
        );
        let body_ok = match &self.body {
            Some(b) => !self.tombstone && b.doc_id() == self.doc_id,
            None => self.tombstone,
        };
        if expected.revision != self.revision || expected.content_hash != self.content_hash || !body_ok
        {
            return Err(StoreError::Corrupt(format!("{} {}", self.doc_id, self.revision)));
        }
        check_doc_id(&self.doc_id)
    }

    pub fn record(&self) -> Option<&Record> {
        self.body.as_ref().and_then(DocBody::as_record)
    }
}

/// Ordering used to pick the current revision among leaves: newest
/// `last_modified` wins, then the lexicographically smallest replica id,
/// then the larger revision.
pub(crate) fn newer(a: &RevisionedDoc, b: &RevisionedDoc) -> bool {
    (a.last_modified, std::cmp::Reverse(&a.replica), &a.revision)
        > (b.last_modified, std::cmp::Reverse(&b.replica), &b.revision)
}

#[derive(Debug, Default, Clone)]
struct DocEntry {
    revs: BTreeMap<Revision, Arc<RevisionedDoc>>,
    /// Revisions that are a parent of some other revision.
    inner: BTreeSet<Revision>,
}

impl DocEntry {
    fn leaves(&self) -> impl Iterator<Item = &Arc<RevisionedDoc>> {
        self.revs
            .iter()
            .filter(|(r, _)| !self.inner.contains(*r))
            .map(|(_, d)| d)
    }

    fn live_leaves(&self) -> Vec<&Arc<RevisionedDoc>> {
        self.leaves().filter(|d| !d.tombstone).collect()
    }

    /// Winner among live leaves; a fully deleted doc resolves to its newest tombstone.
    fn current(&self) -> &Arc<RevisionedDoc> {
        let live = self.live_leaves();
        let pool: Vec<&Arc<RevisionedDoc>> = if live.is_empty() {
            self.leaves().collect()
        } else {
            live
        };
        pool.into_iter()
            .reduce(|best, d| if newer(d, best) { d } else { best })
            .expect("a stored document has at least one revision")
    }

    fn insert(&mut self, doc: Arc<RevisionedDoc>) {
        for p in &doc.parents {
            self.inner.insert(p.clone());
        }
        self.revs.insert(doc.revision.clone(), doc);
    }
}

/// Page of shared-record metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page<T> {
    pub total: usize,
    pub offset: usize,
    pub items: Vec<T>,
}

pub struct Store {
    replica_id: String,
    docs: BTreeMap<String, DocEntry>,
    /// Insertion order; position + 1 is the change sequence number.
    changes: Vec<(String, Revision)>,
    checkpoints: BTreeMap<String, u64>,
    log: Option<log::Log>,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store")
            .field("replica_id", &self.replica_id)
            .field("docs", &self.docs.len())
            .field("seq", &self.changes.len())
            .finish()
    }
}

impl Store {
    /// A store that lives only in memory.
    pub fn in_memory(replica_id: impl Into<String>) -> Store {
        Store {
            replica_id: replica_id.into(),
            docs: BTreeMap::new(),
            changes: Vec::new(),
            checkpoints: BTreeMap::new(),
            log: None,
        }
    }

    /// Open (or create) a durable store in `dir`. A new store takes
    /// `replica_id`; an existing one keeps the id it was created with.
    pub fn open(dir: impl AsRef<Path>, replica_id: &str) -> Result<Store, StoreError> {
        let (log, replica_id, entries) = log::Log::open(dir.as_ref(), replica_id)?;
        let mut store = Store::in_memory(replica_id);
        for entry in entries {
            match entry {
                log::Entry::Revision(doc) => store.insert_unlogged(Arc::new(doc)),
                log::Entry::Checkpoint { peer, seq } => {
                    store.checkpoints.insert(peer, seq);
                }
            }
        }
        store.log = Some(log);
        Ok(store)
    }

    pub fn replica_id(&self) -> &str {
        &self.replica_id
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.log.as_ref().map(log::Log::dir)
    }

    /// Latest change sequence number.
    pub fn seq(&self) -> u64 {
        self.changes.len() as u64
    }

    fn insert_unlogged(&mut self, doc: Arc<RevisionedDoc>) {
        self.changes.push((doc.doc_id.clone(), doc.revision.clone()));
        self.docs.entry(doc.doc_id.clone()).or_default().insert(doc);
    }

    fn persist(&mut self, entries: &[log::Entry]) -> Result<(), StoreError> {
        match &mut self.log {
            Some(log) => log.append(entries),
            None => Ok(()),
        }
    }

    pub fn contains(&self, doc_id: &str, rev: &Revision) -> bool {
        self.docs
            .get(doc_id)
            .is_some_and(|e| e.revs.contains_key(rev))
    }

    /// Save a new version of a document. `expected` is the revision the
    /// caller read (`None` when creating). Durable before returning.
    pub fn put(
        &mut self,
        body: DocBody,
        expected: Option<&Revision>,
        now: Timestamp,
    ) -> Result<Arc<RevisionedDoc>, StoreError> {
        let doc_id = body.doc_id();
        check_doc_id(&doc_id)?;
        let last_modified = match &body {
            DocBody::Record(r) => r.meta.last_modified,
            DocBody::Template(_) => now,
        };
        self.write(&doc_id, Some(body), expected, last_modified)
    }

    /// Replace the current revision with a tombstone.
    pub fn delete(
        &mut self,
        doc_id: &str,
        expected: &Revision,
        now: Timestamp,
    ) -> Result<Arc<RevisionedDoc>, StoreError> {
        if !self.docs.contains_key(doc_id) {
            return Err(StoreError::NotFound(doc_id.to_string()));
        }
        self.write(doc_id, None, Some(expected), now)
    }

    fn write(
        &mut self,
        doc_id: &str,
        body: Option<DocBody>,
        expected: Option<&Revision>,
        last_modified: Timestamp,
    ) -> Result<Arc<RevisionedDoc>, StoreError> {
        let current = self.docs.get(doc_id).map(|e| e.current().revision.clone());
        if current.as_ref() != expected {
            return Err(StoreError::RevisionMismatch {
                doc_id: doc_id.to_string(),
                expected: RevLabel(expected.cloned()),
                current: RevLabel(current),
            });
        }
        let tombstone = body.is_none();
        let hash = content_hash(&body);
        let doc = Arc::new(RevisionedDoc::build(
            doc_id,
            current.into_iter().collect(),
            tombstone,
            last_modified,
            &self.replica_id.clone(),
            None,
            hash,
            body,
        ));
        self.persist(&[log::Entry::Revision((*doc).clone())])?;
        self.insert_unlogged(doc.clone());
        Ok(doc)
    }

    /// Current revision of a document, tombstones included.
    pub fn get(&self, doc_id: &str) -> Option<&Arc<RevisionedDoc>> {
        self.docs.get(doc_id).map(DocEntry::current)
    }

    /// Current revision, treating deleted documents as missing.
    pub fn get_live(&self, doc_id: &str) -> Option<&Arc<RevisionedDoc>> {
        self.get(doc_id).filter(|d| !d.tombstone)
    }

    pub fn get_revision(&self, doc_id: &str, rev: &Revision) -> Option<&Arc<RevisionedDoc>> {
        self.docs.get(doc_id)?.revs.get(rev)
    }

    /// Every revision of a document except the current one.
    pub fn archived(&self, doc_id: &str) -> Vec<&Arc<RevisionedDoc>> {
        let Some(entry) = self.docs.get(doc_id) else {
            return Vec::new();
        };
        let current = &entry.current().revision;
        entry.revs.values().filter(|d| &d.revision != current).collect()
    }

    /// All revisions of a document, in revision order.
    pub fn revisions(&self, doc_id: &str) -> Vec<&Arc<RevisionedDoc>> {
        self.docs
            .get(doc_id)
            .map(|e| e.revs.values().collect())
            .unwrap_or_default()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(String::as_str)
    }

    /// Current, non-deleted documents whose id starts with `prefix`.
    pub fn live_docs<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Arc<RevisionedDoc>> + 'a {
        self.docs
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(_, e)| e.current())
            .filter(|d| !d.tombstone)
    }

    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.live_docs("record/").filter_map(|d| d.record())
    }

    pub fn templates(&self) -> impl Iterator<Item = &Template> {
        self.live_docs("template/")
            .filter_map(|d| d.body.as_ref().and_then(DocBody::as_template))
    }

    /// Metadata of shared, non-deleted records, newest first.
    pub fn list_shared(&self, offset: usize, limit: usize) -> Page<RecordMeta> {
        let mut metas: Vec<&RecordMeta> = self
            .records()
            .map(|r| &r.meta)
            .filter(|m| m.shared)
            .collect();
        metas.sort_by(|a, b| {
            b.last_modified
                .cmp(&a.last_modified)
                .then_with(|| a.record_id.cmp(&b.record_id))
        });
        Page {
            total: metas.len(),
            offset,
            items: metas.into_iter().skip(offset).take(limit).cloned().collect(),
        }
    }

    /// Documents with more than one live leaf.
    pub fn conflicts(&self) -> Vec<ConflictReport> {
        self.docs
            .keys()
            .flat_map(|id| self.conflicts_for(id))
            .collect()
    }

    pub fn conflicts_for(&self, doc_id: &str) -> Vec<ConflictReport> {
        let Some(entry) = self.docs.get(doc_id) else {
            return Vec::new();
        };
        let current = entry.current();
        entry
            .live_leaves()
            .into_iter()
            .filter(|d| d.revision != current.revision)
            .map(|other| ConflictReport::pending(current, other))
            .collect()
    }

    /// Settle a pending conflict by recording a merge revision whose parents
    /// are both candidates and whose body is the winner's. Replicas resolving
    /// the same conflict with the same policy produce the same revision.
    pub fn resolve(
        &mut self,
        conflict: &ConflictReport,
        policy: &Policy,
    ) -> Result<(Arc<RevisionedDoc>, ConflictReport), StoreError> {
        let doc_id = &conflict.doc_id;
        let entry = self
            .docs
            .get(doc_id)
            .ok_or_else(|| StoreError::NotFound(doc_id.clone()))?;
        let leaves: BTreeSet<&Revision> = entry.live_leaves().iter().map(|d| &d.revision).collect();
        let (l, r) = (&conflict.local.revision, &conflict.remote.revision);
        if l == r || !leaves.contains(l) || !leaves.contains(r) {
            return Err(StoreError::NotPending(doc_id.clone()));
        }
        let local = entry.revs[l].clone();
        let remote = entry.revs[r].clone();
        let (winner, note, resolution) = match policy {
            Policy::NewestLastModified => {
                let w = if newer(&remote, &local) { remote.clone() } else { local.clone() };
                let res = Resolution::NewestWins {
                    winner: w.revision.clone(),
                };
                (w, ResolutionNote::NewestWins, res)
            }
            Policy::Manual { winner, actor } => {
                let w = if winner == l {
                    local.clone()
                } else if winner == r {
                    remote.clone()
                } else {
                    return Err(StoreError::InvalidWinner(winner.to_string()));
                };
                let res = Resolution::ManualChoice {
                    winner: winner.clone(),
                    actor: actor.clone(),
                };
                (w, ResolutionNote::Manual { actor: actor.clone() }, res)
            }
        };
        let mut parents = vec![l.clone(), r.clone()];
        parents.sort();
        let merged = Arc::new(RevisionedDoc::build(
            doc_id,
            parents,
            false,
            winner.last_modified,
            &winner.replica,
            Some(note),
            winner.content_hash.clone(),
            winner.body.clone(),
        ));
        if !self.contains(doc_id, &merged.revision) {
            self.persist(&[log::Entry::Revision((*merged).clone())])?;
            self.insert_unlogged(merged.clone());
        }
        let mut report = conflict.clone();
        report.resolution = resolution;
        Ok((merged, report))
    }

    pub fn changes_since(&self, since: u64) -> ChangeBatch {
        let start = (since as usize).min(self.changes.len());
        ChangeBatch {
            changes: self.changes[start..]
                .iter()
                .enumerate()
                .map(|(i, (doc_id, rev))| Change {
                    seq: (start + i + 1) as u64,
                    doc_id: doc_id.clone(),
                    revision: rev.clone(),
                })
                .collect(),
            last_seq: self.seq(),
        }
    }

    pub fn checkpoint_for(&self, peer: &str) -> u64 {
        self.checkpoints.get(peer).copied().unwrap_or(0)
    }

    /// Insert revisions received from `peer` and advance its checkpoint, as
    /// one durable log append. Revisions already held are skipped.
    pub fn apply(
        &mut self,
        peer: &str,
        docs: Vec<RevisionedDoc>,
        checkpoint: u64,
    ) -> Result<PushOutcome, StoreError> {
        let mut fresh: Vec<RevisionedDoc> = Vec::new();
        let mut seen: BTreeSet<(String, Revision)> = BTreeSet::new();
        for doc in docs {
            doc.verify()?;
            let key = (doc.doc_id.clone(), doc.revision.clone());
            if self.contains(&doc.doc_id, &doc.revision) || !seen.insert(key) {
                continue;
            }
            for p in &doc.parents {
                if !self.contains(&doc.doc_id, p) && !seen.contains(&(doc.doc_id.clone(), p.clone())) {
                    return Err(StoreError::Corrupt(format!(
                        "{} {} arrived before its parent {p}",
                        doc.doc_id, doc.revision
                    )));
                }
            }
            fresh.push(doc);
        }
        let mut entries: Vec<log::Entry> = fresh.iter().cloned().map(log::Entry::Revision).collect();
        let advance = checkpoint > self.checkpoint_for(peer);
        if advance {
            entries.push(log::Entry::Checkpoint {
                peer: peer.to_string(),
                seq: checkpoint,
            });
        }
        if !entries.is_empty() {
            self.persist(&entries)?;
        }
        if advance {
            self.checkpoints.insert(peer.to_string(), checkpoint);
        }
        let mut conflicts = Vec::new();
        let mut accepted = Vec::new();
        let touched: BTreeSet<String> = fresh.iter().map(|d| d.doc_id.clone()).collect();
        let fresh_revs: BTreeSet<(String, Revision)> = fresh
            .iter()
            .map(|d| (d.doc_id.clone(), d.revision.clone()))
            .collect();
        for doc in fresh {
            accepted.push((doc.doc_id.clone(), doc.revision.clone()));
            self.insert_unlogged(Arc::new(doc));
        }
        for doc_id in touched {
            conflicts.extend(self.conflicts_for(&doc_id).into_iter().filter(|c| {
                fresh_revs.contains(&(doc_id.clone(), c.local.revision.clone()))
                    || fresh_revs.contains(&(doc_id.clone(), c.remote.revision.clone()))
            }));
        }
        Ok(PushOutcome {
            accepted,
            conflicts,
        })
    }

    /// Write every revision as `<doc_id>/<generation>-<hash>.json` under
    /// `dir`, in canonical JSON. Returns the number of files written.
    pub fn export_revisions(&self, dir: &Path) -> Result<usize, StoreError> {
        let mut n = 0;
        for (doc_id, entry) in &self.docs {
            let doc_dir: PathBuf = dir.join(doc_id);
            std::fs::create_dir_all(&doc_dir).map_err(io_err)?;
            for (rev, doc) in &entry.revs {
                std::fs::write(doc_dir.join(format!("{rev}.json")), to_canonical_json(&**doc))
                    .map_err(io_err)?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// Canonical summary of the replicated state: every document's current
    /// revision and full revision set. Equal digests mean equal stores.
    pub fn state_digest(&self) -> String {
        let state: BTreeMap<&str, (&Revision, Vec<&Revision>)> = self
            .docs
            .iter()
            .map(|(id, e)| (id.as_str(), (&e.current().revision, e.revs.keys().collect())))
            .collect();
        sha256_hex(&to_canonical_json(&state))
    }
}

pub(crate) fn io_err(e: std::io::Error) -> StoreError {
    StoreError::StorageFailure(e.to_string())
}
