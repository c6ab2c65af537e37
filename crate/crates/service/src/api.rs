//! HTTP/JSON routes.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use factrix_core::curation::vocab::{VocabError, VocabTerm, Vocabulary};
use factrix_core::curation::{export_entities_csv, ClusterId, Curation, CuratedValue, EntityInstance, LogEntry, Origin};
use factrix_core::record::{Record, RecordMeta, RecordStatus};
use factrix_core::store::{
    record_doc_id, template_doc_id, ConflictReport, DocBody, Page, Policy, PushOutcome, Replica, Revision,
    RevisionedDoc,
};
use factrix_core::template::{validate_template, Template};
use factrix_core::Timestamp;

use crate::error::{ApiError, Body};
use crate::jobs::{submit, JobRequest, JobStatus};
use crate::remote::{ChangesResponse, CheckpointResponse, MissingResponse, PushRequest, RevList};
use crate::state::{lock, vocabulary_revision, write_vocabulary, AppState};

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/templates", get(list_templates).post(create_template))
        .route("/records", get(list_records).post(create_record).put(update_record))
        .route("/records/{id}", get(get_record))
        .route("/records/{id}/status", post(set_status))
        .route("/sync/changes", get(sync_changes).post(sync_missing))
        .route("/sync/fetch", get(sync_fetch_one).post(sync_fetch))
        .route("/sync/push", get(sync_checkpoint).post(sync_push))
        .route("/sync/conflicts", get(sync_conflicts))
        .route("/sync/resolve", post(sync_resolve))
        .route("/entities/{entity_type}", get(list_entities))
        .route("/entities/merge", post(merge_entities))
        .route("/entities/detach", post(detach_entity))
        .route("/entities/correct", post(correct_entity))
        .route("/entities/undo", post(undo_curation))
        .route("/vocabularies", get(list_vocabularies).post(put_vocabulary))
        .route("/vocabularies/{id}", get(get_vocabulary))
        .route("/vocabularies/{id}/terms", post(add_term))
        .route("/vocabularies/{id}/broader", post(set_broader))
        .route("/jobs", get(list_jobs).post(create_job))
        .route("/jobs/{id}", get(get_job))
        .route("/artifacts/{id}", get(get_artifact))
        .fallback(|| async { ApiError::not_found("route") })
        .layer(axum::middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

async fn auth(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

// ---------------------------------------------------------------- templates

async fn list_templates(State(s): State<Arc<AppState>>) -> Json<Vec<Template>> {
    Json(lock(&s.store).templates().cloned().collect())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TemplateDoc {
    pub revision: Revision,
    pub template: Template,
}

/// Templates are immutable per version: re-posting the same document is a
/// no-op, a different one under an existing version is refused.
async fn create_template(State(s): State<Arc<AppState>>, Body(t): Body<Template>) -> ApiResult<Response> {
    let report = validate_template(&t);
    if let Some(first) = report.violations.first() {
        let message = report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        return Err(ApiError::validation(message).at(first.locus.clone()));
    }
    let mut store = lock(&s.store);
    let doc_id = template_doc_id(&t.id, t.version);
    if let Some(existing) = store.get_live(&doc_id) {
        let same = existing.body.as_ref().and_then(DocBody::as_template) == Some(&t);
        if !same {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "VersionExists",
                format!("template {} v{} already exists with different content", t.id, t.version),
            )
            .at(doc_id));
        }
        let revision = existing.revision.clone();
        return Ok(Json(TemplateDoc { revision, template: t }).into_response());
    }
    let doc = store.put(DocBody::Template(t.clone()), None, Timestamp::now())?;
    Ok((
        StatusCode::CREATED,
        Json(TemplateDoc {
            revision: doc.revision.clone(),
            template: t,
        }),
    )
        .into_response())
}

// ---------------------------------------------------------------- records

#[derive(Debug, Serialize, Deserialize)]
pub struct RecordSummary {
    pub revision: Revision,
    #[serde(flatten)]
    pub meta: RecordMeta,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecordDoc {
    pub revision: Revision,
    pub record: Record,
    /// Pending conflicts on this record, if any.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflicts: Vec<ConflictReport>,
}

#[derive(Debug, Deserialize)]
struct RecordQuery {
    status: Option<String>,
    shared: Option<bool>,
    template_id: Option<String>,
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

/// Record metadata, newest first, optionally filtered.
async fn list_records(
    State(s): State<Arc<AppState>>,
    Query(q): Query<RecordQuery>,
) -> ApiResult<Json<Page<RecordSummary>>> {
    let status: Option<RecordStatus> = match &q.status {
        Some(st) => Some(st.parse().map_err(|_| ApiError::bad_request(format!("unknown status `{st}`")).at("status"))?),
        None => None,
    };
    let store = lock(&s.store);
    let mut items: Vec<RecordSummary> = store
        .live_docs("record/")
        .filter_map(|d| d.record().map(|r| (d, r)))
        .filter(|(_, r)| status.is_none_or(|st| r.meta.status == st))
        .filter(|(_, r)| q.shared.is_none_or(|sh| r.meta.shared == sh))
        .filter(|(_, r)| q.template_id.as_ref().is_none_or(|t| &r.meta.template_id == t))
        .map(|(d, r)| RecordSummary {
            revision: d.revision.clone(),
            meta: r.meta.clone(),
        })
        .collect();
    items.sort_by(|a, b| {
        b.meta
            .last_modified
            .cmp(&a.meta.last_modified)
            .then_with(|| a.meta.record_id.cmp(&b.meta.record_id))
    });
    let total = items.len();
    let items = items
        .into_iter()
        .skip(q.offset)
        .take(q.limit.unwrap_or(usize::MAX))
        .collect();
    Ok(Json(Page {
        total,
        offset: q.offset,
        items,
    }))
}

fn check_record(s: &AppState, r: &Record) -> ApiResult<()> {
    let (id, version) = (&r.meta.template_id, r.meta.template_version);
    let store = lock(&s.store);
    let doc = store.get_live(&template_doc_id(id, version)).ok_or_else(|| {
        ApiError::validation(format!("unknown template {id} v{version}")).at(template_doc_id(id, version))
    })?;
    let t = doc.body.as_ref().and_then(DocBody::as_template).expect("template doc");
    r.check_conformance(t).map_err(|e| ApiError::from(e).at(record_doc_id(r.id())))
}

fn save_record(s: &AppState, r: Record, expected: Option<&Revision>) -> ApiResult<RecordDoc> {
    check_record(s, &r)?;
    let doc = lock(&s.store).put(DocBody::Record(r.clone()), expected, Timestamp::now())?;
    Ok(RecordDoc {
        revision: doc.revision.clone(),
        record: r,
        conflicts: Vec::new(),
    })
}

async fn create_record(State(s): State<Arc<AppState>>, Body(r): Body<Record>) -> ApiResult<Response> {
    let doc = save_record(&s, r, None)?;
    Ok((StatusCode::CREATED, Json(doc)).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecordWrite {
    pub record: Record,
    /// The revision the edit started from.
    pub revision: Option<Revision>,
}

async fn update_record(State(s): State<Arc<AppState>>, Body(w): Body<RecordWrite>) -> ApiResult<Json<RecordDoc>> {
    Ok(Json(save_record(&s, w.record, w.revision.as_ref())?))
}

async fn get_record(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<RecordDoc>> {
    let store = lock(&s.store);
    let doc_id = record_doc_id(&id);
    let doc = store
        .get_live(&doc_id)
        .ok_or_else(|| ApiError::not_found(doc_id.clone()))?;
    let record = doc.record().cloned().ok_or_else(|| ApiError::not_found(doc_id.clone()))?;
    Ok(Json(RecordDoc {
        revision: doc.revision.clone(),
        record,
        conflicts: store.conflicts_for(&doc_id),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatusWrite {
    pub status: RecordStatus,
    pub actor: String,
    pub revision: Revision,
}

async fn set_status(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(w): Body<StatusWrite>,
) -> ApiResult<Json<RecordDoc>> {
    let doc_id = record_doc_id(&id);
    let mut record = {
        let store = lock(&s.store);
        let doc = store.get_live(&doc_id).ok_or_else(|| ApiError::not_found(doc_id.clone()))?;
        doc.record().cloned().ok_or_else(|| ApiError::not_found(doc_id.clone()))?
    };
    record.transition_status(w.status, &w.actor, Timestamp::now());
    Ok(Json(save_record(&s, record, Some(&w.revision))?))
}

// ---------------------------------------------------------------- sync

#[derive(Debug, Deserialize)]
struct SinceQuery {
    #[serde(default)]
    since: u64,
}

async fn sync_changes(State(s): State<Arc<AppState>>, Query(q): Query<SinceQuery>) -> Json<ChangesResponse> {
    let store = lock(&s.store);
    Json(ChangesResponse {
        replica_id: store.replica_id().to_string(),
        batch: store.changes_since(q.since),
    })
}

/// Which of the listed revisions this replica lacks.
async fn sync_missing(State(s): State<Arc<AppState>>, Body(l): Body<RevList>) -> ApiResult<Json<MissingResponse>> {
    let missing = lock(&s.store).missing(&l.revs)?;
    Ok(Json(MissingResponse { missing }))
}

#[derive(Debug, Deserialize)]
struct RevQuery {
    doc_id: String,
    revision: Revision,
}

async fn sync_fetch_one(State(s): State<Arc<AppState>>, Query(q): Query<RevQuery>) -> ApiResult<Json<RevisionedDoc>> {
    let store = lock(&s.store);
    let doc = store
        .get_revision(&q.doc_id, &q.revision)
        .ok_or_else(|| ApiError::not_found(format!("{} {}", q.doc_id, q.revision)))?;
    Ok(Json(RevisionedDoc::clone(doc)))
}

async fn sync_fetch(State(s): State<Arc<AppState>>, Body(l): Body<RevList>) -> ApiResult<Json<Vec<RevisionedDoc>>> {
    Ok(Json(lock(&s.store).fetch(&l.revs)?))
}

#[derive(Debug, Deserialize)]
struct PeerQuery {
    peer: String,
}

async fn sync_checkpoint(State(s): State<Arc<AppState>>, Query(q): Query<PeerQuery>) -> Json<CheckpointResponse> {
    let checkpoint = lock(&s.store).checkpoint_for(&q.peer);
    Json(CheckpointResponse {
        peer: q.peer,
        checkpoint,
    })
}

async fn sync_push(State(s): State<Arc<AppState>>, Body(p): Body<PushRequest>) -> ApiResult<Json<PushOutcome>> {
    Ok(Json(lock(&s.store).apply(&p.from, p.docs, p.checkpoint)?))
}

async fn sync_conflicts(State(s): State<Arc<AppState>>) -> Json<Vec<ConflictReport>> {
    Json(lock(&s.store).conflicts())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResolveRequest {
    pub conflict: ConflictReport,
    pub policy: Policy,
}

async fn sync_resolve(
    State(s): State<Arc<AppState>>,
    Body(r): Body<ResolveRequest>,
) -> ApiResult<Json<ConflictReport>> {
    let (_, report) = lock(&s.store).resolve(&r.conflict, &r.policy)?;
    Ok(Json(report))
}

// ---------------------------------------------------------------- entities

#[derive(Debug, Serialize, Deserialize)]
pub struct EntityView {
    pub cluster_id: ClusterId,
    pub entity_type: String,
    pub origin: Origin,
    /// Effective value of every property.
    pub values: BTreeMap<String, String>,
    pub curated: BTreeMap<String, CuratedValue>,
    pub members: Vec<EntityInstance>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EntityList {
    /// Position of the curation log; write requests must quote it.
    pub log_seq: u64,
    pub clusters: Vec<EntityView>,
}

#[derive(Debug, Deserialize)]
struct EntityQuery {
    template_id: Option<String>,
    record_id: Option<String>,
    format: Option<String>,
}

fn log_seq(c: &Curation) -> u64 {
    c.log().last().map_or(0, |e| e.seq)
}

async fn list_entities(
    State(s): State<Arc<AppState>>,
    Path(entity_type): Path<String>,
    Query(q): Query<EntityQuery>,
) -> ApiResult<Response> {
    let slot = lock(&s.curation);
    let Some(c) = slot.as_ref() else {
        if q.format.as_deref() == Some("csv") {
            return Ok(([(header::CONTENT_TYPE, "text/csv")], Vec::new()).into_response());
        }
        return Ok(Json(EntityList {
            log_seq: 0,
            clusters: Vec::new(),
        })
        .into_response());
    };
    let reg = c.registry();
    if q.format.as_deref() == Some("csv") {
        let csv = export_entities_csv(reg, &entity_type);
        return Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response());
    }
    let matches = |i: &EntityInstance| {
        i.occurrences.iter().any(|o| {
            q.template_id.as_ref().is_none_or(|t| &o.template_id == t)
                && q.record_id.as_ref().is_none_or(|r| &o.record_id == r)
        })
    };
    let clusters = reg
        .clusters_of_type(&entity_type)
        .filter_map(|cl| {
            let members: Vec<EntityInstance> = cl
                .members
                .iter()
                .filter_map(|m| reg.instance(m).cloned())
                .collect();
            if !members.iter().any(matches) {
                return None;
            }
            let values = reg
                .property_names(cl)
                .into_iter()
                .filter_map(|p| reg.effective_value(cl, p).map(|v| (p.to_string(), v.to_string())))
                .collect();
            Some(EntityView {
                cluster_id: cl.cluster_id,
                entity_type: cl.entity_type.clone(),
                origin: cl.origin.clone(),
                values,
                curated: cl.curated.clone(),
                members,
            })
        })
        .collect();
    Ok(Json(EntityList {
        log_seq: log_seq(c),
        clusters,
    })
    .into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CurationOutcome {
    pub log_seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<ClusterId>,
    pub entry: LogEntry,
}

/// Run a curation action if the caller saw the latest log position.
fn curate(
    s: &AppState,
    expected: u64,
    f: impl FnOnce(&mut Curation, Timestamp) -> Result<Option<ClusterId>, ApiError>,
) -> ApiResult<Json<CurationOutcome>> {
    let mut slot = lock(&s.curation);
    let c = slot.as_mut().ok_or_else(|| {
        ApiError::new(StatusCode::CONFLICT, "NoRegistry", "no entities extracted yet; run an extract job")
    })?;
    let current = log_seq(c);
    if current != expected {
        return Err(ApiError::mismatch(
            format!("curation log is at {current}, request was based on {expected}"),
            "curation",
        ));
    }
    let cluster_id = f(c, Timestamp::now())?;
    let entry = c.log().last().cloned().expect("an action was logged");
    Ok(Json(CurationOutcome {
        log_seq: entry.seq,
        cluster_id,
        entry,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MergeRequest {
    pub clusters: Vec<ClusterId>,
    #[serde(default)]
    pub preferred: BTreeMap<String, String>,
    pub actor: String,
    pub log_seq: u64,
}

async fn merge_entities(State(s): State<Arc<AppState>>, Body(m): Body<MergeRequest>) -> ApiResult<Json<CurationOutcome>> {
    curate(&s, m.log_seq, |c, now| {
        Ok(Some(c.merge(&m.clusters, m.preferred, &m.actor, now)?))
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetachRequest {
    pub instance_id: String,
    pub actor: String,
    pub log_seq: u64,
}

async fn detach_entity(State(s): State<Arc<AppState>>, Body(d): Body<DetachRequest>) -> ApiResult<Json<CurationOutcome>> {
    curate(&s, d.log_seq, |c, now| Ok(Some(c.detach(&d.instance_id, &d.actor, now)?)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorrectRequest {
    pub cluster_id: ClusterId,
    pub property: String,
    pub value: String,
    pub actor: String,
    pub log_seq: u64,
}

async fn correct_entity(State(s): State<Arc<AppState>>, Body(r): Body<CorrectRequest>) -> ApiResult<Json<CurationOutcome>> {
    curate(&s, r.log_seq, |c, now| {
        c.correct(r.cluster_id, &r.property, &r.value, &r.actor, now)?;
        Ok(Some(r.cluster_id))
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UndoRequest {
    pub actor: String,
    pub log_seq: u64,
}

async fn undo_curation(State(s): State<Arc<AppState>>, Body(u): Body<UndoRequest>) -> ApiResult<Json<CurationOutcome>> {
    curate(&s, u.log_seq, |c, now| {
        c.undo(&u.actor, now)?;
        Ok(None)
    })
}

// ---------------------------------------------------------------- vocabularies

#[derive(Debug, Serialize, Deserialize)]
pub struct VocabularyDoc {
    pub revision: String,
    pub vocabulary: Vocabulary,
}

fn vocab_doc(v: &Vocabulary) -> VocabularyDoc {
    VocabularyDoc {
        revision: vocabulary_revision(v),
        vocabulary: v.clone(),
    }
}

async fn list_vocabularies(State(s): State<Arc<AppState>>) -> Json<Vec<VocabularyDoc>> {
    Json(lock(&s.vocabularies).values().map(vocab_doc).collect())
}

async fn get_vocabulary(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<VocabularyDoc>> {
    lock(&s.vocabularies)
        .get(&id)
        .map(|v| Json(vocab_doc(v)))
        .ok_or_else(|| VocabError::UnknownVocabulary(id).into())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VocabularyWrite {
    pub vocabulary: Vocabulary,
    /// Revision the edit started from; absent when creating.
    pub revision: Option<String>,
}

/// Apply `edit` to a copy of vocabulary `id` and store it if the caller's
/// revision is current.
fn edit_vocabulary(
    s: &AppState,
    id: &str,
    expected: Option<&str>,
    edit: impl FnOnce(Option<&Vocabulary>) -> Result<Vocabulary, ApiError>,
) -> ApiResult<Json<VocabularyDoc>> {
    let mut vocabs = lock(&s.vocabularies);
    let current = vocabs.get(id);
    let current_rev = current.map(vocabulary_revision);
    if current_rev.as_deref() != expected {
        return Err(ApiError::mismatch(
            format!(
                "vocabulary {id} is at {}, request was based on {}",
                current_rev.as_deref().unwrap_or("none"),
                expected.unwrap_or("none")
            ),
            format!("vocabulary/{id}"),
        ));
    }
    let next = edit(current)?;
    next.validate()?;
    write_vocabulary(&s.data_dir, &next).map_err(|e| ApiError::internal(e.to_string()))?;
    let doc = vocab_doc(&next);
    vocabs.insert(id.to_string(), next);
    Ok(Json(doc))
}

async fn put_vocabulary(State(s): State<Arc<AppState>>, Body(w): Body<VocabularyWrite>) -> ApiResult<Json<VocabularyDoc>> {
    let id = w.vocabulary.vocab_id.clone();
    w.vocabulary.validate()?;
    edit_vocabulary(&s, &id, w.revision.as_deref(), |_| Ok(w.vocabulary))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TermWrite {
    pub term_id: String,
    pub term: VocabTerm,
    pub revision: String,
}

async fn add_term(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(w): Body<TermWrite>,
) -> ApiResult<Json<VocabularyDoc>> {
    edit_vocabulary(&s, &id, Some(&w.revision), |v| {
        let mut v = v.cloned().ok_or_else(|| VocabError::UnknownVocabulary(id.clone()))?;
        v.add_term(&w.term_id, w.term)?;
        Ok(v)
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BroaderWrite {
    pub term: String,
    pub broader: Option<String>,
    pub revision: String,
}

async fn set_broader(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(w): Body<BroaderWrite>,
) -> ApiResult<Json<VocabularyDoc>> {
    edit_vocabulary(&s, &id, Some(&w.revision), |v| {
        let mut v = v.cloned().ok_or_else(|| VocabError::UnknownVocabulary(id.clone()))?;
        v.set_broader(&w.term, w.broader.as_deref())?;
        Ok(v)
    })
}

// ---------------------------------------------------------------- jobs

async fn create_job(State(s): State<Arc<AppState>>, Body(req): Body<JobRequest>) -> ApiResult<Response> {
    let status = submit(&s, req)?;
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn list_jobs(State(s): State<Arc<AppState>>) -> Json<Vec<JobStatus>> {
    Json(s.jobs.list())
}

async fn get_job(State(s): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<Json<JobStatus>> {
    s.jobs
        .get(id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("job {id}")))
}

async fn get_artifact(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let path = s
        .jobs
        .artifact_path(&id)
        .ok_or_else(|| ApiError::not_found(format!("artifact {id}")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let content_type = match path.extension().and_then(|x| x.to_str()) {
        Some("nt") => "application/n-triples",
        Some("nq") => "application/n-quads",
        Some("ttl") => "text/turtle",
        Some("xml") => "application/xml",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}
