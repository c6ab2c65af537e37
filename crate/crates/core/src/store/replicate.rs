//! Changes-feed replication between replicas.
//!
//! One pass pulls from `source` into `target`: read the source's changes
//! after the target's checkpoint, ask the target which revisions it lacks,
//! fetch those and push them together with the new checkpoint. The push is
//! a single durable append, so a failure anywhere leaves the checkpoint
//! where it was and the pass can simply be retried.

use serde::{Deserialize, Serialize};

use super::{Revision, RevisionedDoc, Store, StoreError};
use crate::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub seq: u64,
    pub doc_id: String,
    pub revision: Revision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeBatch {
    pub changes: Vec<Change>,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub revision: Revision,
    pub last_modified: Timestamp,
    pub replica: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Resolution {
    Pending,
    NewestWins { winner: Revision },
    ManualChoice { winner: Revision, actor: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub doc_id: String,
    pub local: Candidate,
    pub remote: Candidate,
    pub resolution: Resolution,
}

impl ConflictReport {
    pub(super) fn pending(local: &RevisionedDoc, remote: &RevisionedDoc) -> ConflictReport {
        let candidate = |d: &RevisionedDoc| Candidate {
            revision: d.revision.clone(),
            last_modified: d.last_modified,
            replica: d.replica.clone(),
        };
        ConflictReport {
            doc_id: local.doc_id.clone(),
            local: candidate(local),
            remote: candidate(remote),
            resolution: Resolution::Pending,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum Policy {
    NewestLastModified,
    Manual { winner: Revision, actor: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PushOutcome {
    pub accepted: Vec<(String, Revision)>,
    pub conflicts: Vec<ConflictReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub source: String,
    pub target: String,
    pub transferred: usize,
    pub checkpoint: u64,
    pub conflicts: Vec<ConflictReport>,
}

/// The replication surface of a store, local or remote.
pub trait Replica {
    fn replica_id(&mut self) -> Result<String, StoreError>;
    fn changes(&mut self, since: u64) -> Result<ChangeBatch, StoreError>;
    /// The subset of `revs` this replica does not hold, order preserved.
    fn missing(&mut self, revs: &[(String, Revision)]) -> Result<Vec<(String, Revision)>, StoreError>;
    fn fetch(&mut self, revs: &[(String, Revision)]) -> Result<Vec<RevisionedDoc>, StoreError>;
    fn push(&mut self, from: &str, docs: Vec<RevisionedDoc>, checkpoint: u64) -> Result<PushOutcome, StoreError>;
    fn checkpoint(&mut self, peer: &str) -> Result<u64, StoreError>;
}

impl Replica for Store {
    fn replica_id(&mut self) -> Result<String, StoreError> {
        Ok(self.replica_id.clone())
    }

    fn changes(&mut self, since: u64) -> Result<ChangeBatch, StoreError> {
        Ok(self.changes_since(since))
    }

    fn missing(&mut self, revs: &[(String, Revision)]) -> Result<Vec<(String, Revision)>, StoreError> {
        Ok(revs
            .iter()
            .filter(|(d, r)| !self.contains(d, r))
            .cloned()
            .collect())
    }

    fn fetch(&mut self, revs: &[(String, Revision)]) -> Result<Vec<RevisionedDoc>, StoreError> {
        revs.iter()
            .map(|(d, r)| {
                self.get_revision(d, r)
                    .map(|doc| RevisionedDoc::clone(doc))
                    .ok_or_else(|| StoreError::NotFound(format!("{d} {r}")))
            })
            .collect()
    }

    fn push(&mut self, from: &str, docs: Vec<RevisionedDoc>, checkpoint: u64) -> Result<PushOutcome, StoreError> {
        self.apply(from, docs, checkpoint)
    }

    fn checkpoint(&mut self, peer: &str) -> Result<u64, StoreError> {
        Ok(self.checkpoint_for(peer))
    }
}

/// Pull everything `target` lacks from `source`. Idempotent: an immediate
/// re-run transfers nothing.
pub fn replicate<S, T>(source: &mut S, target: &mut T) -> Result<ReplicationReport, StoreError>
where
    S: Replica + ?Sized,
    T: Replica + ?Sized,
{
    let source_id = source.replica_id()?;
    let target_id = target.replica_id()?;
    let since = target.checkpoint(&source_id)?;
    let batch = source.changes(since)?;
    let wanted: Vec<(String, Revision)> = batch
        .changes
        .into_iter()
        .map(|c| (c.doc_id, c.revision))
        .collect();
    let missing = if wanted.is_empty() {
        Vec::new()
    } else {
        target.missing(&wanted)?
    };
    let docs = if missing.is_empty() {
        Vec::new()
    } else {
        source.fetch(&missing)?
    };
    let transferred = docs.len();
    let outcome = if transferred == 0 && batch.last_seq <= since {
        PushOutcome {
            accepted: Vec::new(),
            conflicts: Vec::new(),
        }
    } else {
        target.push(&source_id, docs, batch.last_seq)?
    };
    Ok(ReplicationReport {
        source: source_id,
        target: target_id,
        transferred,
        checkpoint: batch.last_seq.max(since),
        conflicts: outcome.conflicts,
    })
}

impl<R: Replica + ?Sized> Replica for Box<R> {
    fn replica_id(&mut self) -> Result<String, StoreError> {
        (**self).replica_id()
    }
    fn changes(&mut self, since: u64) -> Result<ChangeBatch, StoreError> {
        (**self).changes(since)
    }
    fn missing(&mut self, revs: &[(String, Revision)]) -> Result<Vec<(String, Revision)>, StoreError> {
        (**self).missing(revs)
    }
    fn fetch(&mut self, revs: &[(String, Revision)]) -> Result<Vec<RevisionedDoc>, StoreError> {
        (**self).fetch(revs)
    }
    fn push(&mut self, from: &str, docs: Vec<RevisionedDoc>, checkpoint: u64) -> Result<PushOutcome, StoreError> {
        (**self).push(from, docs, checkpoint)
    }
    fn checkpoint(&mut self, peer: &str) -> Result<u64, StoreError> {
        (**self).checkpoint(peer)
    }
}
