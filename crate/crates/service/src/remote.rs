//! Replication over HTTP: a blocking client speaking the `/sync` endpoints,
//! and a lock-per-call view of the local store so no lock is held across a
//! network round trip.

use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use factrix_core::store::{
    replicate, ChangeBatch, PushOutcome, Replica, ReplicationReport, Revision, RevisionedDoc, Store,
    StoreError,
};

use crate::error::ErrorBody;
use crate::state::lock;

/// `GET /sync/changes` response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChangesResponse {
    pub replica_id: String,
    #[serde(flatten)]
    pub batch: ChangeBatch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RevList {
    pub revs: Vec<(String, Revision)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingResponse {
    pub missing: Vec<(String, Revision)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushRequest {
    pub from: String,
    pub docs: Vec<RevisionedDoc>,
    pub checkpoint: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointResponse {
    pub peer: String,
    pub checkpoint: u64,
}

pub struct HttpReplica {
    base: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
    id: Option<String>,
}

impl HttpReplica {
    pub fn new(base: &str, token: Option<String>) -> Result<HttpReplica, StoreError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .map_err(|e| StoreError::PeerUnreachable(e.to_string()))?;
        Ok(HttpReplica {
            base: base.trim_end_matches('/').to_string(),
            token,
            client,
            id: None,
        })
    }

    fn send<T: DeserializeOwned>(&self, req: reqwest::blocking::RequestBuilder) -> Result<T, StoreError> {
        let req = match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        };
        let resp = req
            .send()
            .map_err(|e| StoreError::PeerUnreachable(format!("{}: {e}", self.base)))?;
        let status = resp.status();
        if status.is_success() {
            return resp
                .json()
                .map_err(|e| StoreError::Corrupt(format!("{}: {e}", self.base)));
        }
        let body: Option<ErrorBody> = resp.json().ok();
        let message = body
            .as_ref()
            .map_or_else(|| status.to_string(), |b| format!("{}: {}", b.code, b.message));
        Err(match body.as_ref().map(|b| b.code.as_str()) {
            Some("Corrupt") => StoreError::Corrupt(message),
            Some("NotFound") => StoreError::NotFound(message),
            _ => StoreError::PeerUnreachable(format!("{}: {message}", self.base)),
        })
    }

    fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T, StoreError> {
        self.send(self.client.get(format!("{}{path}", self.base)).query(query))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, StoreError> {
        self.send(self.client.post(format!("{}{path}", self.base)).json(body))
    }
}

impl Replica for HttpReplica {
    fn replica_id(&mut self) -> Result<String, StoreError> {
        if let Some(id) = &self.id {
            return Ok(id.clone());
        }
        let r: ChangesResponse = self.get("/sync/changes", &[("since", u64::MAX.to_string())])?;
        self.id = Some(r.replica_id.clone());
        Ok(r.replica_id)
    }

    fn changes(&mut self, since: u64) -> Result<ChangeBatch, StoreError> {
        let r: ChangesResponse = self.get("/sync/changes", &[("since", since.to_string())])?;
        self.id = Some(r.replica_id);
        Ok(r.batch)
    }

    fn missing(&mut self, revs: &[(String, Revision)]) -> Result<Vec<(String, Revision)>, StoreError> {
        let r: MissingResponse = self.post("/sync/changes", &RevList { revs: revs.to_vec() })?;
        Ok(r.missing)
    }

    fn fetch(&mut self, revs: &[(String, Revision)]) -> Result<Vec<RevisionedDoc>, StoreError> {
        self.post("/sync/fetch", &RevList { revs: revs.to_vec() })
    }

    fn push(&mut self, from: &str, docs: Vec<RevisionedDoc>, checkpoint: u64) -> Result<PushOutcome, StoreError> {
        self.post(
            "/sync/push",
            &PushRequest {
                from: from.to_string(),
                docs,
                checkpoint,
            },
        )
    }

    fn checkpoint(&mut self, peer: &str) -> Result<u64, StoreError> {
        let r: CheckpointResponse = self.get("/sync/push", &[("peer", peer.to_string())])?;
        Ok(r.checkpoint)
    }
}

/// A shared store taking its lock once per replication step.
#[derive(Clone)]
pub struct LocalReplica(pub Arc<Mutex<Store>>);

impl Replica for LocalReplica {
    fn replica_id(&mut self) -> Result<String, StoreError> {
        Replica::replica_id(&mut *lock(&self.0))
    }
    fn changes(&mut self, since: u64) -> Result<ChangeBatch, StoreError> {
        Replica::changes(&mut *lock(&self.0), since)
    }
    fn missing(&mut self, revs: &[(String, Revision)]) -> Result<Vec<(String, Revision)>, StoreError> {
        lock(&self.0).missing(revs)
    }
    fn fetch(&mut self, revs: &[(String, Revision)]) -> Result<Vec<RevisionedDoc>, StoreError> {
        lock(&self.0).fetch(revs)
    }
    fn push(&mut self, from: &str, docs: Vec<RevisionedDoc>, checkpoint: u64) -> Result<PushOutcome, StoreError> {
        lock(&self.0).push(from, docs, checkpoint)
    }
    fn checkpoint(&mut self, peer: &str) -> Result<u64, StoreError> {
        lock(&self.0).checkpoint(peer)
    }
}

/// One pull then one push between `local` and `peer`.
pub fn sync_once(
    local: &mut dyn Replica,
    peer: &mut dyn Replica,
) -> Result<(ReplicationReport, ReplicationReport), StoreError> {
    let pulled = replicate(peer, local)?;
    let pushed = replicate(local, peer)?;
    Ok((pulled, pushed))
}
