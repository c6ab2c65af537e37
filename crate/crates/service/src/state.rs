//! Everything a running service holds, and where it keeps it on disk.
//!
//! ```text
//! <data>/store/                 revisioned document store (records, templates)
//! <data>/curation/base.json     registry snapshot taken by the last extraction
//! <data>/curation/log.jsonl     curation actions on top of it
//! <data>/vocabularies/*.json    managed vocabularies
//! <data>/artifacts/             job outputs
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use thiserror::Error;

use factrix_core::canonical::{sha256_hex, to_canonical_json};
use factrix_core::curation::vocab::{load_vocabularies, Vocabulary};
use factrix_core::curation::{extract_instances, Curation, CurationError, Registry};
use factrix_core::pipeline::{Config, ConfigPaths, PipelineError};
use factrix_core::record::Record;
use factrix_core::store::{Store, StoreError};
use factrix_core::template::TemplateSet;

use crate::jobs::Jobs;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("address {0} is already in use")]
    PortInUse(String),
    #[error("data directory {path} is unavailable: {message}")]
    DataDirUnavailable { path: PathBuf, message: String },
    #[error("configuration: {0}")]
    Config(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Service settings.
#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub addr: String,
    pub data_dir: PathBuf,
    /// Directory laid out as [`ConfigPaths::under`]; its templates are not read.
    pub config_dir: PathBuf,
    /// Replaces the URI policy's namespace when set.
    pub namespace: Option<String>,
    /// Shared bearer token; `None` runs unauthenticated.
    pub token: Option<String>,
    pub peers: Vec<String>,
    pub sync_interval: Duration,
    pub workers: usize,
    pub replica_id: Option<String>,
}

impl ApiConfig {
    pub fn check(&self) -> Result<(), ServeError> {
        if self.sync_interval.is_zero() {
            return Err(ServeError::Io(std::io::Error::other("sync interval must be positive")));
        }
        if self.workers == 0 {
            return Err(ServeError::Io(std::io::Error::other("worker count must be positive")));
        }
        Ok(())
    }
}

pub struct AppState {
    pub store: Arc<Mutex<Store>>,
    pub curation: Mutex<Option<Curation>>,
    pub vocabularies: Mutex<BTreeMap<String, Vocabulary>>,
    /// Mappings, ontology, policy and rules; templates come from the store.
    pub base: Config,
    pub data_dir: PathBuf,
    pub token: Option<String>,
    pub jobs: Jobs,
}

/// Lock, shrugging off poisoning: every guarded value is only replaced
/// wholesale after a successful operation.
pub fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

pub fn fresh_replica_id() -> String {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let seed = format!("{nanos}/{}", std::process::id());
    format!("replica-{}", &sha256_hex(seed.as_bytes())[..12])
}

impl AppState {
    pub fn open(cfg: &ApiConfig) -> Result<AppState, ServeError> {
        let data = cfg.data_dir.clone();
        probe_writable(&data)?;
        let mut base = Config::load_with(&ConfigPaths::under(&cfg.config_dir), TemplateSet::new())?;
        if let Some(ns) = &cfg.namespace {
            base.policy.namespace = ns.clone();
        }
        let replica = cfg.replica_id.clone().unwrap_or_else(fresh_replica_id);
        let store = Store::open(data.join("store"), &replica)?;

        let vocab_dir = data.join("vocabularies");
        if !vocab_dir.is_dir() {
            std::fs::create_dir_all(&vocab_dir)?;
            for v in base.vocabularies.values() {
                write_vocabulary(&data, v)?;
            }
        }
        let vocabularies = load_vocabularies(&vocab_dir).map_err(|e| PipelineError::Invalid {
            path: vocab_dir.clone(),
            message: e.to_string(),
        })?;

        let curation = match read_base(&data)? {
            Some(reg) => Some(Curation::open(reg, &data.join("curation/log.jsonl"))?),
            None => None,
        };
        std::fs::create_dir_all(data.join("artifacts"))?;
        Ok(AppState {
            store: Arc::new(Mutex::new(store)),
            curation: Mutex::new(curation),
            vocabularies: Mutex::new(vocabularies),
            jobs: Jobs::new(data.join("artifacts"), cfg.workers)?,
            base,
            data_dir: data,
            token: cfg.token.clone(),
        })
    }

    /// Current live templates of the store.
    pub fn templates(&self) -> TemplateSet {
        let store = lock(&self.store);
        let mut set = TemplateSet::new();
        for t in store.templates() {
            set.insert(t.clone());
        }
        set
    }

    pub fn records(&self) -> Vec<Record> {
        lock(&self.store).records().cloned().collect()
    }

    /// Extract a fresh base from the shared records and replay the existing
    /// curation log on it. Nothing changes when the log no longer applies.
    pub fn reextract(&self, records: &[Record], templates: &TemplateSet) -> Result<Registry, ServeError> {
        let reg = extract_instances(records, templates)?;
        let dir = self.data_dir.join("curation");
        std::fs::create_dir_all(&dir)?;
        let mut slot = lock(&self.curation);
        // drop the old handle first so only one writer has the log open
        let previous = slot.take();
        match Curation::open(reg.clone(), &dir.join("log.jsonl")) {
            Ok(c) => {
                write_atomic(&dir.join("base.json"), &serde_json::to_vec(&reg).map_err(std::io::Error::other)?)?;
                let out = c.registry().clone();
                *slot = Some(c);
                Ok(out)
            }
            Err(e) => {
                *slot = previous;
                Err(e.into())
            }
        }
    }
}

fn probe_writable(dir: &Path) -> Result<(), ServeError> {
    let unavailable = |e: std::io::Error| ServeError::DataDirUnavailable {
        path: dir.to_path_buf(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(unavailable)?;
    let probe = dir.join(".probe");
    std::fs::write(&probe, b"ok").map_err(unavailable)?;
    std::fs::remove_file(&probe).map_err(unavailable)
}

fn read_base(data: &Path) -> Result<Option<Registry>, ServeError> {
    let path = data.join("curation/base.json");
    match std::fs::read(&path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes).map_err(std::io::Error::other)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Content revision of a vocabulary document.
pub fn vocabulary_revision(v: &Vocabulary) -> String {
    sha256_hex(&to_canonical_json(v))
}

pub fn write_vocabulary(data: &Path, v: &Vocabulary) -> std::io::Result<()> {
    let bytes = serde_json::to_vec_pretty(v).map_err(std::io::Error::other)?;
    write_atomic(&data.join("vocabularies").join(format!("{}.json", v.vocab_id)), &bytes)
}

/// Write through a synced temporary file and rename, so readers and
/// crashes see either the old or the new content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        if let Ok(d) = std::fs::File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}
