//! HTTP routes. Handlers are thin wrappers over [`App`]; blocking work
//! (image loading, matching, log writes) runs on the blocking pool.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pbm_core::detection::AnnotationRecord;
use pbm_core::eval;
use pbm_core::trials::{Decision, TrialStep};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::error::ServiceError;
use crate::store::Verdict;
use crate::workflow::{App, PairRegistration};

/// Optional header naming the acting annotator.
pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) | ServiceError::MissingAsset(_) | ServiceError::NothingToVerify => {
                StatusCode::NOT_FOUND
            }
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Invalid(_)
            | ServiceError::InsufficientPool { .. }
            | ServiceError::Submission(_)
            | ServiceError::Core(_)
            | ServiceError::Json(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::CorruptLog { .. } | ServiceError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type AppState = Arc<App>;
type ApiResult<T> = Result<T, ServiceError>;

async fn blocking<T: Send + 'static>(
    app: &AppState,
    f: impl FnOnce(&App) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    let app = app.clone();
    tokio::task::spawn_blocking(move || f(&app))
        .await
        .map_err(|e| ServiceError::Invalid(format!("worker failed: {e}")))?
}

fn annotator_header(headers: &HeaderMap) -> Option<String> {
    headers
        .get(ANNOTATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
}

async fn register_pair(State(app): State<AppState>, Json(reg): Json<PairRegistration>) -> ApiResult<Response> {
    let pair = blocking(&app, move |a| a.register_pair(reg)).await?;
    Ok((StatusCode::CREATED, Json(pair)).into_response())
}

async fn compare(State(app): State<AppState>, Path(pair_id): Path<String>) -> ApiResult<Response> {
    let result = blocking(&app, move |a| a.run_comparison(&pair_id)).await?;
    Ok(Json(result).into_response())
}

async fn get_result(State(app): State<AppState>, Path(pair_id): Path<String>) -> ApiResult<Response> {
    let result = app
        .stored_result(&pair_id)
        .ok_or_else(|| ServiceError::NotFound(format!("result for {pair_id}")))?;
    Ok(Json(json!({
        "pair_id": pair_id,
        "config_hash": app.config_hash(),
        "result": result,
        "reviews": app.reviews(&pair_id),
    }))
    .into_response())
}

async fn get_evidence(State(app): State<AppState>, Path(pair_id): Path<String>) -> ApiResult<Response> {
    let svg = blocking(&app, move |a| a.evidence_svg(&pair_id)).await?;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response())
}

#[derive(Debug, Deserialize)]
struct ReviewBody {
    annotator_id: String,
    #[serde(default)]
    match_index: Option<usize>,
    verdict: Verdict,
    #[serde(default)]
    comment: String,
}

async fn post_review(
    State(app): State<AppState>,
    Path(pair_id): Path<String>,
    Json(body): Json<ReviewBody>,
) -> ApiResult<Response> {
    let review = blocking(&app, move |a| {
        a.record_review(&pair_id, &body.annotator_id, body.match_index, body.verdict, body.comment)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(review)).into_response())
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: String,
    step: TrialStep,
}

async fn next_trial(State(app): State<AppState>, Query(q): Query<NextQuery>) -> ApiResult<Response> {
    let view = blocking(&app, move |a| match q.step {
        TrialStep::Evaluation => a
            .next_evaluation_trial(&q.annotator)?
            .ok_or_else(|| ServiceError::NotFound(format!("no open evaluation trials for {}", q.annotator))),
        TrialStep::Verification => a.next_verification_trial(&q.annotator),
    })
    .await?;
    Ok(Json(view).into_response())
}

async fn get_trial(State(app): State<AppState>, Path(trial_id): Path<String>) -> ApiResult<Response> {
    Ok(Json(app.trial_view(&trial_id)?).into_response())
}

#[derive(Debug, Deserialize)]
struct DecisionBody {
    decision: Decision,
    #[serde(default)]
    annotations: Vec<AnnotationRecord>,
}

async fn post_decision(
    State(app): State<AppState>,
    Path(trial_id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<DecisionBody>,
) -> ApiResult<Response> {
    let who = annotator_header(&headers);
    let record = blocking(&app, move |a| {
        a.submit_decision(&trial_id, who.as_deref(), body.decision, body.annotations)
    })
    .await?;
    Ok(Json(json!({
        "trial_id": record.trial_id,
        "step": record.step,
        "decision": record.decision,
        "n_annotations": record.annotations.len(),
        "completed_ms": record.completed_ms,
    }))
    .into_response())
}

async fn human_stats(State(app): State<AppState>) -> Response {
    let table = eval::human_accuracy_stats(&app.trials());
    Json(json!({ "table": table, "text": table.to_string() })).into_response()
}

async fn change_stats(State(app): State<AppState>) -> Response {
    let table = eval::decision_change_stats(&app.trials());
    Json(json!({ "table": table, "text": table.to_string() })).into_response()
}

async fn get_config(State(app): State<AppState>) -> Response {
    Json(json!({
        "match": app.config.match_config,
        "config_hash": app.config_hash(),
        "filter_bank": { "n_filters": app.config.bank.n_filters(), "size": app.config.bank.size() },
        "seed": app.config.seed,
        "pool_filter": app.config.pool_filter,
    }))
    .into_response()
}

pub fn router(app: Arc<App>) -> Router {
    let files = ServeDir::new(app.config.asset_dir.clone());
    Router::new()
        .route("/pairs", post(register_pair))
        .route("/compare/{pair_id}", post(compare))
        .route("/results/{pair_id}", get(get_result))
        .route("/results/{pair_id}/evidence.svg", get(get_evidence))
        .route("/results/{pair_id}/reviews", post(post_review))
        .route("/trials/next", get(next_trial))
        .route("/trials/{trial_id}", get(get_trial))
        .route("/trials/{trial_id}/decision", post(post_decision))
        .route("/stats/human", get(human_stats))
        .route("/stats/changes", get(change_stats))
        .route("/config", get(get_config))
        .nest_service("/files", files)
        .with_state(app)
}

pub async fn serve(addr: std::net::SocketAddr, app: Arc<App>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
