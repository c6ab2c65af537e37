//! Error bodies: every failure leaves the service as `{code, message, locus}`.

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use factrix_core::curation::vocab::VocabError;
use factrix_core::curation::CurationError;
use factrix_core::pipeline::PipelineError;
use factrix_core::record::RecordError;
use factrix_core::store::StoreError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub locus: Option<String>,
}

#[derive(Debug, Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub locus: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            code,
            message: message.into(),
            locus: None,
        }
    }

    pub fn at(mut self, locus: impl Into<String>) -> ApiError {
        self.locus = Some(locus.into());
        self
    }

    pub fn not_found(what: impl Into<String>) -> ApiError {
        let what = what.into();
        ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("not found: {what}")).at(what)
    }

    pub fn validation(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationFailed", message)
    }

    pub fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    pub fn internal(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }

    /// Stale revision or log position supplied by the caller.
    pub fn mismatch(message: impl Into<String>, locus: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::CONFLICT, "RevisionMismatch", message).at(locus)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
            locus: self.locus,
        };
        (self.status, axum::Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::RevisionMismatch { doc_id, .. } => ApiError::mismatch(message, doc_id),
            StoreError::NotFound(id) => ApiError::new(StatusCode::NOT_FOUND, "NotFound", message).at(id),
            StoreError::InvalidDocId(id) => ApiError::new(StatusCode::BAD_REQUEST, "InvalidDocId", message).at(id),
            StoreError::StorageFailure(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StorageFailure", message),
            StoreError::PeerUnreachable(_) => ApiError::new(StatusCode::BAD_GATEWAY, "PeerUnreachable", message),
            StoreError::Corrupt(_) => ApiError::new(StatusCode::BAD_REQUEST, "Corrupt", message),
            StoreError::NotPending(id) => ApiError::new(StatusCode::CONFLICT, "NotPending", message).at(id),
            StoreError::InvalidWinner(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidWinner", message),
        }
    }
}

impl From<RecordError> for ApiError {
    fn from(e: RecordError) -> Self {
        let locus = match &e {
            RecordError::PathNotFound(p) | RecordError::NotNestedColumn(p) | RecordError::SingleRowTableFull(p) => {
                Some(p.clone())
            }
            RecordError::RowOutOfBounds { path, .. } => Some(path.clone()),
            RecordError::UnknownTemplate { id, version } => Some(format!("template/{id}/{version}")),
            _ => None,
        };
        ApiError {
            locus,
            ..ApiError::validation(e.to_string())
        }
    }
}

impl From<CurationError> for ApiError {
    fn from(e: CurationError) -> Self {
        let message = e.to_string();
        let (status, code, locus) = match &e {
            CurationError::UnknownInstance(id) => (StatusCode::NOT_FOUND, "UnknownInstance", Some(id.clone())),
            CurationError::UnknownCluster(id) => (StatusCode::NOT_FOUND, "UnknownCluster", Some(id.to_string())),
            CurationError::UnresolvedPropertyConflict(props) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                "UnresolvedPropertyConflict",
                Some(props.join(",")),
            ),
            CurationError::UnknownProperty { property, .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "UnknownProperty", Some(property.clone()))
            }
            CurationError::NothingToUndo => (StatusCode::CONFLICT, "NothingToUndo", None),
            CurationError::ReplayFailed { seq, .. } => (StatusCode::CONFLICT, "ReplayFailed", Some(seq.to_string())),
            CurationError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "StorageFailure", None),
            CurationError::DanglingTemplate { record_id, .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "ValidationFailed", Some(record_id.clone()))
            }
            CurationError::NeedTwoClusters
            | CurationError::TypeMixing(_)
            | CurationError::AlreadySingleton(_)
            | CurationError::InvalidRule(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ValidationFailed", None),
        };
        ApiError {
            status,
            code,
            message,
            locus,
        }
    }
}

impl From<VocabError> for ApiError {
    fn from(e: VocabError) -> Self {
        let message = e.to_string();
        let (status, code, locus) = match &e {
            VocabError::UnknownVocabulary(v) => (StatusCode::NOT_FOUND, "UnknownVocabulary", Some(v.clone())),
            VocabError::UnknownTerm { term, .. } => (StatusCode::NOT_FOUND, "UnknownTerm", Some(term.clone())),
            VocabError::CycleDetected { term, .. } => (StatusCode::UNPROCESSABLE_ENTITY, "CycleDetected", Some(term.clone())),
            VocabError::DuplicateTerm(t) => (StatusCode::CONFLICT, "DuplicateTerm", Some(t.clone())),
            VocabError::HasNarrower(t) => (StatusCode::CONFLICT, "HasNarrower", Some(t.clone())),
            VocabError::EmptyLabels(t) | VocabError::InvalidId(t) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "ValidationFailed", Some(t.clone()))
            }
            VocabError::Malformed(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ValidationFailed", None),
        };
        ApiError {
            status,
            code,
            message,
            locus,
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let (PipelineError::Io { path, .. } | PipelineError::Invalid { path, .. }) = &e;
        let locus = path.display().to_string();
        if e.is_io() {
            ApiError::internal(e.to_string()).at(locus)
        } else {
            ApiError::validation(e.to_string()).at(locus)
        }
    }
}

/// `axum::Json` with rejections reported in the service's error format.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    axum::Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match axum::Json::<T>::from_request(req, state).await {
            Ok(axum::Json(v)) => Ok(Body(v)),
            Err(r) => Err(ApiError::new(r.status(), "BadRequest", r.body_text())),
        }
    }
}
