use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ncdsearch_core::{ByteRange, CorpusIndex, DocumentRecord, Engine, EngineConfig, GTable};
use serde::{Deserialize, Serialize};

use crate::commands::save_gtable;
use crate::QueryResponse;

/// Number of recent query results kept for the highlights endpoint.
pub const CACHE_CAPACITY: usize = 64;

type Spans = BTreeMap<String, Vec<ByteRange>>;

pub struct AppState {
    corpus: Option<Arc<CorpusIndex>>,
    gtable: Arc<GTable>,
    /// Where new g rows are saved, if anywhere.
    corpus_dir: Option<PathBuf>,
    config: EngineConfig,
    recent: Mutex<VecDeque<(String, Spans)>>,
}

impl AppState {
    pub fn new(
        corpus: Option<CorpusIndex>,
        gtable: GTable,
        corpus_dir: Option<PathBuf>,
        config: EngineConfig,
    ) -> AppState {
        AppState {
            corpus: corpus.map(Arc::new),
            gtable: Arc::new(gtable),
            corpus_dir,
            config,
            recent: Mutex::new(VecDeque::new()),
        }
    }

    fn corpus(&self) -> Result<Arc<CorpusIndex>, ApiError> {
        self.corpus.clone().ok_or_else(|| {
            ApiError::new(
                StatusCode::CONFLICT,
                "corpus_not_loaded",
                "no corpus is loaded",
            )
        })
    }

    fn remember(&self, id: String, highlights: Spans) {
        let mut recent = self.recent.lock().expect("cache poisoned");
        recent.retain(|(k, _)| *k != id);
        recent.push_back((id, highlights));
        while recent.len() > CACHE_CAPACITY {
            recent.pop_front();
        }
    }

    fn highlights(&self, id: &str) -> Option<Spans> {
        let recent = self.recent.lock().expect("cache poisoned");
        recent.iter().find(|(k, _)| k == id).map(|(_, h)| h.clone())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryRequest {
    pub text: String,
    pub alpha: Option<f64>,
    pub max_blocks: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub corpus_loaded: bool,
    pub documents: usize,
    pub blocks: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DocumentList {
    pub documents: Vec<DocumentRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DocumentText {
    #[serde(flatten)]
    pub record: DocumentRecord,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HighlightParams {
    pub query_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Highlights {
    pub doc_id: String,
    pub query_id: String,
    pub spans: Vec<ByteRange>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/query", post(query))
        .route("/docs", get(list_docs))
        .route("/docs/{id}", get(get_doc))
        .route("/docs/{id}/highlights", get(get_highlights))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let (documents, blocks) = state
        .corpus
        .as_ref()
        .map_or((0, 0), |c| (c.document_count(), c.block_count()));
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        corpus_loaded: state.corpus.is_some(),
        documents,
        blocks,
    })
}

async fn query(
    State(state): State<Arc<AppState>>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> Result<Json<QueryResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let corpus = state.corpus()?;
    let alpha = req.alpha.unwrap_or(state.config.alpha);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ApiError::bad_request(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    if req.text.is_empty() {
        return Err(ApiError::bad_request("text must not be empty"));
    }
    let max_blocks = req.max_blocks.unwrap_or(state.config.max_blocks_shown);

    let worker = Arc::clone(&state);
    let (response, highlights) = tokio::task::spawn_blocking(move || {
        let before = worker.gtable.len();
        let result = Engine::new(&corpus)
            .query(req.text.as_bytes(), alpha, &worker.gtable)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        if worker.gtable.len() != before {
            if let Some(dir) = &worker.corpus_dir {
                save_gtable(dir, &worker.gtable);
            }
        }
        let response = QueryResponse::new(&result, req.text.as_bytes(), max_blocks);
        Ok::<_, ApiError>((response, result.highlights))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    state.remember(response.query_id.clone(), highlights);
    Ok(Json(response))
}

async fn list_docs(State(state): State<Arc<AppState>>) -> Result<Json<DocumentList>, ApiError> {
    let corpus = state.corpus()?;
    Ok(Json(DocumentList {
        documents: corpus.documents().cloned().collect(),
    }))
}

fn unknown_doc(id: &str) -> ApiError {
    ApiError::new(
        StatusCode::NOT_FOUND,
        "document_not_found",
        format!("no document {id:?}"),
    )
}

async fn get_doc(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<DocumentText>, ApiError> {
    let corpus = state.corpus()?;
    let doc = corpus.document(&id).ok_or_else(|| unknown_doc(&id))?;
    Ok(Json(DocumentText {
        record: doc.record.clone(),
        text: String::from_utf8_lossy(&doc.bytes).into_owned(),
    }))
}

async fn get_highlights(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    params: Result<Query<HighlightParams>, QueryRejection>,
) -> Result<Json<Highlights>, ApiError> {
    let corpus = state.corpus()?;
    if corpus.document(&id).is_none() {
        return Err(unknown_doc(&id));
    }
    let Query(params) = params.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let cached = state.highlights(&params.query_id).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "query_not_found",
            format!("query {} is not among recent results", params.query_id),
        )
    })?;
    Ok(Json(Highlights {
        spans: cached.get(&id).cloned().unwrap_or_default(),
        doc_id: id,
        query_id: params.query_id,
    }))
}
