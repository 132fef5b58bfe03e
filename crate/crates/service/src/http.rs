//! JSON-over-HTTP API. Images arrive as multipart PNG parts.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use sbac_core::analysis::{InsightAction, LedgerError};
use sbac_core::marks::RawShape;
use sbac_core::ripple::RippleError;

use crate::error::ServiceError;
use crate::gateway::{Image, ImagePurpose, TransportError};
use crate::service::Service;
use crate::session::{Stage, GUIDANCE_DECK};

const MAX_BODY: usize = 32 * 1024 * 1024;

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(ServiceError::InvalidInput(msg.into()))
}

impl ApiError {
    fn status(&self) -> (StatusCode, &'static str) {
        use ServiceError as E;
        match &self.0 {
            E::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            E::Ledger(LedgerError::UnknownInsight(_)) => (StatusCode::NOT_FOUND, "unknown_insight"),
            E::Ripple(RippleError::UnknownPolicy(_)) => (StatusCode::NOT_FOUND, "unknown_policy"),
            E::Busy(_) => (StatusCode::CONFLICT, "busy"),
            E::IllegalTransition { .. } => (StatusCode::CONFLICT, "illegal_transition"),
            E::WrongStage(_) | E::Stage(_) => (StatusCode::CONFLICT, "wrong_stage"),
            E::NothingPending(_) => (StatusCode::CONFLICT, "nothing_pending"),
            E::Ledger(LedgerError::Dismissed(_)) => (StatusCode::CONFLICT, "dismissed"),
            E::InvalidInput(_) | E::Transport(TransportError::InvalidRequest(_)) => {
                (StatusCode::BAD_REQUEST, "invalid_input")
            }
            E::Mark(_) | E::Ripple(_) | E::Ledger(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_input"),
            E::IdentificationInvalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "identification_invalid"),
            E::AnalysisUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "analysis_unavailable"),
            E::ClarifyUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "clarify_unavailable"),
            E::TestUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "test_unavailable"),
            E::Transport(_) => (StatusCode::BAD_GATEWAY, "transport"),
            E::Prompt(_) | E::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        (status, Json(json!({ "error": code, "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(
    svc: &Arc<Service>,
    f: impl FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
) -> ApiResult<T> {
    let svc = svc.clone();
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError(ServiceError::InvalidInput(format!("request aborted: {e}"))))?
        .map_err(ApiError)
}

/// Reads every multipart field into memory by name.
async fn fields(mut mp: Multipart) -> ApiResult<HashMap<String, Vec<u8>>> {
    let mut out = HashMap::new();
    while let Some(field) = mp.next_field().await.map_err(|e| bad_request(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| bad_request(e.to_string()))?;
        out.insert(name, bytes.to_vec());
    }
    Ok(out)
}

fn image(fields: &mut HashMap<String, Vec<u8>>, name: &str, purpose: ImagePurpose) -> ApiResult<Image> {
    let bytes = fields.remove(name).ok_or_else(|| bad_request(format!("missing multipart field {name:?}")))?;
    Image::png(purpose, bytes).map_err(|e| ApiError(e.into()))
}

fn text(fields: &mut HashMap<String, Vec<u8>>, name: &str) -> ApiResult<Option<String>> {
    fields
        .remove(name)
        .map(|b| String::from_utf8(b).map_err(|_| bad_request(format!("field {name:?} is not UTF-8"))))
        .transpose()
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct CreateBody {
    #[serde(default)]
    scenario_context: String,
}

#[derive(Deserialize)]
struct SketchBody {
    shapes: Vec<RawShape>,
}

#[derive(Serialize)]
struct SketchView {
    shapes: Vec<RawShape>,
    marks: Vec<sbac_core::marks::NumberedMark>,
    stale: bool,
}

#[derive(Deserialize)]
struct MessageBody {
    message: String,
}

#[derive(Deserialize)]
struct EditBody {
    field: String,
    value: String,
}

#[derive(Deserialize)]
struct AcceptBody {
    accept: bool,
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/guidance", get(|| async { Json(GUIDANCE_DECK) }))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/sketch", get(sketch).put(put_sketch))
        .route("/sessions/{id}/identify", post(identify))
        .route("/sessions/{id}/entities", get(entities))
        .route("/sessions/{id}/analyze", post(analyze))
        .route("/sessions/{id}/insights/{iid}/clarify", post(clarify))
        .route("/sessions/{id}/insights/{iid}/accept", post(accept))
        .route("/sessions/{id}/insights/{iid}/dismiss", post(dismiss))
        .route("/sessions/{id}/policies/{pid}", patch(edit_policy))
        .route("/sessions/{id}/stage", post(stage))
        .route("/sessions/{id}/test", post(test))
        .route("/sessions/{id}/sketch-proposal", post(sketch_proposal))
        .route("/sessions/{id}/shadow", post(shadow))
        .route("/sessions/{id}/budget", get(budget))
        .route("/sessions/{id}/export", get(export))
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(svc)
}

async fn create(State(svc): State<Arc<Service>>, Json(body): Json<CreateBody>) -> ApiResult<impl IntoResponse> {
    let state = blocking(&svc, move |s| s.create_session(&body.scenario_context)).await?;
    Ok((StatusCode::CREATED, Json(state)))
}

async fn session(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.get(&id)).await?))
}

async fn sketch(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let st = blocking(&svc, move |s| s.get(&id)).await?;
    Ok(Json(SketchView { shapes: st.sketch_snapshot, marks: st.mark_map, stale: st.stale }))
}

async fn put_sketch(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Json(body): Json<SketchBody>,
) -> ApiResult<impl IntoResponse> {
    let marks = blocking(&svc, move |s| s.put_sketch(&id, body.shapes)).await?;
    Ok(Json(json!({ "marks": marks })))
}

async fn identify(State(svc): State<Arc<Service>>, Path(id): Path<String>, mp: Multipart) -> ApiResult<impl IntoResponse> {
    let mut f = fields(mp).await?;
    let raw = image(&mut f, "raw", ImagePurpose::Unannotated)?;
    let numbered = image(&mut f, "numbered", ImagePurpose::Numbered)?;
    Ok(Json(blocking(&svc, move |s| s.identify(&id, raw, numbered)).await?))
}

async fn entities(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let st = blocking(&svc, move |s| s.get(&id)).await?;
    Ok(Json(st.entities))
}

async fn analyze(State(svc): State<Arc<Service>>, Path(id): Path<String>, mp: Multipart) -> ApiResult<impl IntoResponse> {
    let mut f = fields(mp).await?;
    let som = image(&mut f, "som", ImagePurpose::Som)?;
    let message = text(&mut f, "message")?;
    Ok(Json(blocking(&svc, move |s| s.analyze(&id, som, message.as_deref())).await?))
}

async fn clarify(
    State(svc): State<Arc<Service>>,
    Path((id, iid)): Path<(String, String)>,
    Json(body): Json<MessageBody>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.clarify(&id, &iid, &body.message)).await?))
}

async fn accept(State(svc): State<Arc<Service>>, Path((id, iid)): Path<(String, String)>) -> ApiResult<StatusCode> {
    blocking(&svc, move |s| s.set_insight(&id, &iid, InsightAction::Accept)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn dismiss(State(svc): State<Arc<Service>>, Path((id, iid)): Path<(String, String)>) -> ApiResult<StatusCode> {
    blocking(&svc, move |s| s.set_insight(&id, &iid, InsightAction::Dismiss)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn edit_policy(
    State(svc): State<Arc<Service>>,
    Path((id, pid)): Path<(String, String)>,
    Json(body): Json<EditBody>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.edit_policy(&id, &pid, &body.field, &body.value)).await?))
}

async fn stage(State(svc): State<Arc<Service>>, Path(id): Path<String>, mp: Multipart) -> ApiResult<impl IntoResponse> {
    let mut f = fields(mp).await?;
    let target = text(&mut f, "target")?.ok_or_else(|| bad_request("missing multipart field \"target\""))?;
    let target = Stage::parse(target.trim()).ok_or_else(|| bad_request(format!("unknown stage {target:?}")))?;
    let raw = image(&mut f, "raw", ImagePurpose::Unannotated)?;
    let numbered = image(&mut f, "numbered", ImagePurpose::Numbered)?;
    let st = blocking(&svc, move |s| {
        s.enter_stage(&id, target, raw, numbered)?;
        s.get(&id)
    })
    .await?;
    let vignettes: Vec<_> = st.vignettes.visible().cloned().collect();
    Ok(Json(json!({
        "stage": st.stage,
        "identification": st.identification,
        "entities": st.entities,
        "vignettes": if st.stage == Stage::Test { Some(vignettes) } else { None },
    })))
}

async fn test(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.run_test(&id)).await?))
}

async fn sketch_proposal(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Json(body): Json<AcceptBody>,
) -> ApiResult<impl IntoResponse> {
    let marks = blocking(&svc, move |s| s.resolve_sketch_proposal(&id, body.accept)).await?;
    Ok(Json(json!({ "marks": marks })))
}

async fn shadow(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Json(body): Json<AcceptBody>,
) -> ApiResult<StatusCode> {
    blocking(&svc, move |s| s.resolve_shadow(&id, body.accept)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn budget(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.budget(&id)).await?))
}

async fn export(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.export(&id)).await?))
}
