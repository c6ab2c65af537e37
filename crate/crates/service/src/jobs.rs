//! Background jobs on a bounded worker pool.
//!
//! A request is checked and its inputs snapshotted before it is queued, so
//! a queued job never fails validation later and its output depends only
//! on the state at submission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use factrix_core::curation::{extract_instances, replay, LogEntry};
use factrix_core::pipeline::{Config, RdfFormat};
use factrix_core::record::Record;
use factrix_core::template::{Template, TemplateSet};
use factrix_core::Timestamp;

use crate::error::ApiError;
use crate::state::{lock, write_atomic, AppState};
use crate::work::{export_artifact, rdf_format, transform_artifact, ExportKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Transform,
    Export,
    Extract,
    AutoMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done { artifact: String },
    Failed { message: String },
}

impl JobState {
    fn rank(&self) -> u8 {
        match self {
            JobState::Queued => 0,
            JobState::Running => 1,
            JobState::Done { .. } | JobState::Failed { .. } => 2,
        }
    }

    pub fn is_final(&self) -> bool {
        self.rank() == 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: u64,
    pub kind: JobKind,
    #[serde(flatten)]
    pub state: JobState,
    /// Counts reported by the job once done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<Value>,
}

impl JobStatus {
    /// Move forward; returns false (and changes nothing) for a step that
    /// would go backwards or sideways.
    pub fn advance(&mut self, next: JobState) -> bool {
        if next.rank() != self.state.rank() + 1 {
            return false;
        }
        self.state = next;
        true
    }
}

/// Body of `POST /jobs`.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobRequest {
    Transform {
        /// `nt` (default), `nq` or `ttl`.
        #[serde(default)]
        format: Option<String>,
        /// Only records of this template.
        #[serde(default)]
        template_id: Option<String>,
        #[serde(default)]
        record_ids: Option<Vec<String>>,
    },
    Export {
        record_id: String,
        format: ExportKind,
    },
    Extract,
    AutoMatch {
        #[serde(default = "system_actor")]
        actor: String,
    },
}

fn system_actor() -> String {
    "system".into()
}

enum Work {
    Transform {
        config: Box<Config>,
        records: Vec<Record>,
        log: Option<Vec<LogEntry>>,
        format: RdfFormat,
    },
    Export {
        record: Box<Record>,
        template: Box<Template>,
        kind: ExportKind,
    },
    Extract {
        records: Vec<Record>,
        templates: TemplateSet,
    },
    AutoMatch {
        records: Vec<Record>,
        templates: TemplateSet,
        actor: String,
    },
}

impl Work {
    fn kind(&self) -> JobKind {
        match self {
            Work::Transform { .. } => JobKind::Transform,
            Work::Export { .. } => JobKind::Export,
            Work::Extract { .. } => JobKind::Extract,
            Work::AutoMatch { .. } => JobKind::AutoMatch,
        }
    }

    fn extension(&self) -> &'static str {
        match self {
            Work::Transform { format, .. } => format.extension(),
            Work::Export { kind, .. } => kind.extension(),
            Work::Extract { .. } | Work::AutoMatch { .. } => "json",
        }
    }
}

pub struct Jobs {
    table: Mutex<BTreeMap<u64, JobStatus>>,
    next: AtomicU64,
    permits: Arc<Semaphore>,
    dir: PathBuf,
}

/// Highest job number among existing artifacts, so ids stay unique across
/// restarts.
fn last_artifact_id(dir: &Path) -> std::io::Result<u64> {
    let mut max = 0;
    for e in std::fs::read_dir(dir)? {
        let name = e?.file_name();
        let name = name.to_string_lossy();
        if let Some(n) = name.split('.').next().and_then(|s| s.parse::<u64>().ok()) {
            max = max.max(n);
        }
    }
    Ok(max)
}

impl Jobs {
    pub fn new(dir: PathBuf, workers: usize) -> std::io::Result<Jobs> {
        std::fs::create_dir_all(&dir)?;
        Ok(Jobs {
            table: Mutex::new(BTreeMap::new()),
            next: AtomicU64::new(last_artifact_id(&dir)? + 1),
            permits: Arc::new(Semaphore::new(workers)),
            dir,
        })
    }

    pub fn get(&self, id: u64) -> Option<JobStatus> {
        lock(&self.table).get(&id).cloned()
    }

    pub fn list(&self) -> Vec<JobStatus> {
        lock(&self.table).values().cloned().collect()
    }

    pub fn artifact_path(&self, artifact: &str) -> Option<PathBuf> {
        let ok = !artifact.is_empty()
            && artifact
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'.')
            && !artifact.starts_with('.');
        ok.then(|| self.dir.join(artifact)).filter(|p| p.is_file())
    }

    fn update(&self, id: u64, next: JobState, summary: Option<Value>) {
        let mut table = lock(&self.table);
        if let Some(job) = table.get_mut(&id) {
            if job.advance(next) && summary.is_some() {
                job.summary = summary;
            }
        }
    }
}

/// Check a request and queue it. Returns the queued status.
pub fn submit(state: &Arc<AppState>, req: JobRequest) -> Result<JobStatus, ApiError> {
    let work = prepare(state, req)?;
    let jobs = &state.jobs;
    let id = jobs.next.fetch_add(1, Ordering::SeqCst);
    let status = JobStatus {
        job_id: id,
        kind: work.kind(),
        state: JobState::Queued,
        summary: None,
    };
    lock(&jobs.table).insert(id, status.clone());
    let state = state.clone();
    tokio::spawn(async move {
        let Ok(_permit) = state.jobs.permits.clone().acquire_owned().await else {
            return;
        };
        state.jobs.update(id, JobState::Running, None);
        let artifact = format!("{id}.{}", work.extension());
        let runner = state.clone();
        let path = state.jobs.dir.join(&artifact);
        let outcome = tokio::task::spawn_blocking(move || run(&runner, work, &path)).await;
        match outcome {
            Ok(Ok(summary)) => state.jobs.update(id, JobState::Done { artifact }, Some(summary)),
            Ok(Err(message)) => state.jobs.update(id, JobState::Failed { message }, None),
            Err(e) => state.jobs.update(id, JobState::Failed { message: e.to_string() }, None),
        }
    });
    Ok(status)
}

fn prepare(state: &AppState, req: JobRequest) -> Result<Work, ApiError> {
    let templates = state.templates();
    let missing_template = |r: &Record| templates.get(&r.meta.template_id, r.meta.template_version).is_none();
    match req {
        JobRequest::Transform {
            format,
            template_id,
            record_ids,
        } => {
            let format = match format.as_deref() {
                None => RdfFormat::NTriples,
                Some(ext) => rdf_format(ext)
                    .ok_or_else(|| ApiError::validation(format!("unknown format `{ext}`")).at("format"))?,
            };
            if let Some(t) = &template_id {
                if templates.latest(t).is_none() {
                    return Err(ApiError::validation(format!("unknown template `{t}`")).at(t.clone()));
                }
            }
            let mut records = state.records();
            if let Some(t) = &template_id {
                records.retain(|r| &r.meta.template_id == t);
            }
            if let Some(ids) = &record_ids {
                for id in ids {
                    if !records.iter().any(|r| r.id() == id) {
                        return Err(ApiError::validation(format!("unknown record `{id}`")).at(id.clone()));
                    }
                }
                records.retain(|r| ids.iter().any(|id| id == r.id()));
            }
            if let Some(r) = records.iter().find(|r| missing_template(r)) {
                return Err(ApiError::validation(format!(
                    "record {} uses unknown template {} v{}",
                    r.id(),
                    r.meta.template_id,
                    r.meta.template_version
                ))
                .at(r.id().to_string()));
            }
            let mut config = state.base.clone();
            config.templates = templates;
            config.vocabularies = lock(&state.vocabularies).clone();
            let log = lock(&state.curation).as_ref().map(|c| c.log().to_vec());
            Ok(Work::Transform {
                config: Box::new(config),
                records,
                log,
                format,
            })
        }
        JobRequest::Export { record_id, format } => {
            let record = state
                .records()
                .into_iter()
                .find(|r| r.id() == record_id)
                .ok_or_else(|| ApiError::validation(format!("unknown record `{record_id}`")).at(record_id.clone()))?;
            let template = templates
                .get(&record.meta.template_id, record.meta.template_version)
                .cloned()
                .ok_or_else(|| {
                    ApiError::validation(format!(
                        "record {record_id} uses unknown template {} v{}",
                        record.meta.template_id, record.meta.template_version
                    ))
                    .at(record_id.clone())
                })?;
            Ok(Work::Export {
                record: Box::new(record),
                template: Box::new(template),
                kind: format,
            })
        }
        JobRequest::Extract | JobRequest::AutoMatch { .. } => {
            // only shared records are extracted, so only theirs must resolve
            let records = state.records();
            if let Some(r) = records.iter().find(|r| r.meta.shared && missing_template(r)) {
                return Err(ApiError::validation(format!(
                    "record {} uses unknown template {} v{}",
                    r.id(),
                    r.meta.template_id,
                    r.meta.template_version
                ))
                .at(r.id().to_string()));
            }
            Ok(match req {
                JobRequest::AutoMatch { actor } => Work::AutoMatch {
                    records,
                    templates,
                    actor,
                },
                _ => Work::Extract { records, templates },
            })
        }
    }
}

fn run(state: &AppState, work: Work, out: &Path) -> Result<Value, String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let (bytes, summary) = match work {
        Work::Transform {
            config,
            records,
            log,
            format,
        } => {
            let reg = match log {
                None => None,
                Some(log) => {
                    let fresh = extract_instances(&records, &config.templates).map_err(|e| err(&e))?;
                    Some(replay(&fresh, &log).map_err(|e| err(&e))?)
                }
            };
            let bytes = transform_artifact(&config, &records, reg.as_ref(), format).map_err(|e| err(&e))?;
            let summary = json!({ "records": records.len(), "bytes": bytes.len() });
            (bytes, summary)
        }
        Work::Export { record, template, kind } => {
            let bytes = export_artifact(&record, &template, kind);
            let summary = json!({ "record_id": record.id(), "bytes": bytes.len() });
            (bytes, summary)
        }
        Work::Extract { records, templates } => {
            let reg = state.reextract(&records, &templates).map_err(|e| err(&e))?;
            let summary = json!({
                "instances": reg.instances.len(),
                "clusters": reg.clusters.len(),
                "counts": reg.counts(),
            });
            (serde_json::to_vec_pretty(&summary).map_err(|e| err(&e))?, summary)
        }
        Work::AutoMatch {
            records,
            templates,
            actor,
        } => {
            if lock(&state.curation).is_none() {
                state.reextract(&records, &templates).map_err(|e| err(&e))?;
            }
            let mut slot = lock(&state.curation);
            let c = slot.as_mut().ok_or("no registry to match")?;
            let report = c
                .auto_match(&state.base.match_rules, &actor, Timestamp::now())
                .map_err(|e| err(&e))?;
            let reg = c.registry();
            let summary = json!({
                "report": report,
                "instances": reg.instances.len(),
                "clusters": reg.clusters.len(),
                "counts": reg.counts(),
            });
            (serde_json::to_vec_pretty(&summary).map_err(|e| err(&e))?, summary)
        }
    };
    write_atomic(out, &bytes).map_err(|e| err(&e))?;
    Ok(summary)
}
