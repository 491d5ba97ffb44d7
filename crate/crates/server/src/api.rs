//! HTTP routes.
//!
//! Sessions live in the file store; every turn loads the session, runs the
//! dialogue pipeline on a blocking thread under the per-session lock, saves
//! it, publishes any terminal events and only then answers the request.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use futures_util::stream::{self, BoxStream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

use denial_core::dialogue::{
    BotResponse, DialogueEngine, Role, Session, SessionLocks, SessionStatus, SuccessReason,
};
use denial_core::persona::BehaviorMode;
use denial_core::storage::{
    validate_id, FileStore, QuestionnaireResponse, QuestionnaireScales, QuestionnaireStats,
    SessionFilter, SessionSummary,
};

use crate::error::ApiError;
use crate::events::{terminal_events, EventHub, EventKind, EventPayload, SessionEvent};

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Expose belief, mode and current technique in responses.
    pub reveal_debug: bool,
    pub cors_origins: Vec<String>,
    pub static_dir: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<DialogueEngine>,
    pub store: Arc<FileStore>,
    pub locks: SessionLocks,
    pub events: Arc<EventHub>,
    pub scales: Arc<QuestionnaireScales>,
    pub reveal_debug: bool,
}

impl AppState {
    pub fn new(
        engine: DialogueEngine,
        store: FileStore,
        scales: QuestionnaireScales,
        reveal_debug: bool,
    ) -> Self {
        Self {
            engine: Arc::new(engine),
            store: Arc::new(store),
            locks: SessionLocks::default(),
            events: Arc::new(EventHub::default()),
            scales: Arc::new(scales),
            reveal_debug,
        }
    }
}

pub fn router(state: AppState, options: &ServerOptions) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/catalog", get(catalog))
        .route("/api/personas", get(personas))
        .route(
            "/api/personas/{id}/questionnaire-stats",
            get(questionnaire_stats),
        )
        .route("/api/questionnaire", get(questionnaire_items))
        .route("/api/sessions", get(list_sessions).post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/messages", post(post_message))
        .route("/api/sessions/{id}/identify", post(post_identify))
        .route("/api/sessions/{id}/abandon", post(post_abandon))
        .route("/api/sessions/{id}/events", get(session_events))
        .route("/api/sessions/{id}/transcript", get(transcript))
        .route(
            "/api/sessions/{id}/questionnaire",
            post(submit_questionnaire),
        )
        .with_state(state);

    let mut app = match &options.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    if !options.cors_origins.is_empty() {
        let origin = if options.cors_origins.iter().any(|o| o == "*") {
            AllowOrigin::from(Any)
        } else {
            AllowOrigin::list(
                options
                    .cors_origins
                    .iter()
                    .filter_map(|o| HeaderValue::from_str(o).ok()),
            )
        };
        app = app.layer(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods(Any)
                .allow_headers(Any),
        );
    }
    app.layer(TraceLayer::new_for_http())
}

// ── Views ───────────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
pub struct TechniqueRef {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PersonaView {
    pub id: String,
    pub display_name: String,
    pub topic: String,
    pub backstory: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assigned_techniques: Option<Vec<TechniqueRef>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DebugView {
    pub belief: f64,
    pub mode: BehaviorMode,
    pub last_technique: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TurnView {
    pub index: usize,
    pub role: Role,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technique_used: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub persona_id: String,
    pub created_at: DateTime<Utc>,
    pub status: SessionStatus,
    pub score: i64,
    pub identified: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<SuccessReason>,
    pub turns: Vec<TurnView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub debug: Option<DebugView>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreatedSession {
    #[serde(flatten)]
    pub session: SessionView,
    pub opening_line: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TurnReply {
    #[serde(flatten)]
    pub response: BotResponse,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub debug: Option<DebugView>,
}

fn debug_view(session: &Session, reveal: bool) -> Option<DebugView> {
    reveal.then(|| DebugView {
        belief: session.belief,
        mode: session.mode,
        last_technique: session.last_technique.clone(),
    })
}

fn session_view(session: &Session, reveal: bool) -> SessionView {
    SessionView {
        id: session.id.clone(),
        persona_id: session.persona_id.clone(),
        created_at: session.created_at,
        status: session.status,
        score: session.score,
        identified: session.identified.iter().cloned().collect(),
        outcome: session.outcome,
        turns: session
            .turns
            .iter()
            .map(|t| TurnView {
                index: t.index,
                role: t.role,
                text: t.text.clone(),
                timestamp: t.timestamp,
                technique_used: if reveal {
                    t.technique_used.clone()
                } else {
                    None
                },
            })
            .collect(),
        debug: debug_view(session, reveal),
    }
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v)
        .map_err(|e| ApiError::validation(e.body_text()))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

// ── Handlers ────────────────────────────────────────────────────────────

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "llm_backend": state.engine.gateway().backend_id(),
        "catalog_version": state.engine.catalog().version(),
    }))
}

async fn catalog(State(state): State<AppState>) -> Json<serde_json::Value> {
    let catalog = state.engine.catalog();
    let categories: Vec<_> = catalog
        .categories()
        .iter()
        .map(|c| {
            serde_json::json!({
                "id": c.id,
                "display_name": c.display_name,
                "description": c.description,
                "techniques": catalog.techniques_in(c.id).map(|t| serde_json::json!({
                    "id": t.id,
                    "name": t.name,
                    "description": t.description,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    Json(serde_json::json!({ "version": catalog.version(), "categories": categories }))
}

async fn personas(State(state): State<AppState>) -> Json<Vec<PersonaView>> {
    let catalog = state.engine.catalog();
    Json(
        state
            .engine
            .personas()
            .map(|p| PersonaView {
                id: p.id.clone(),
                display_name: p.display_name.clone(),
                topic: p.topic.clone(),
                backstory: p.backstory.clone(),
                assigned_techniques: p.reveal_techniques.then(|| {
                    p.assigned_techniques
                        .iter()
                        .map(|id| TechniqueRef {
                            id: id.clone(),
                            name: catalog
                                .technique(id)
                                .map(|t| t.name.clone())
                                .unwrap_or_else(|| id.clone()),
                        })
                        .collect()
                }),
            })
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
pub struct CreateSessionBody {
    pub persona_id: String,
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSessionBody>, JsonRejection>,
) -> Result<(StatusCode, Json<CreatedSession>), ApiError> {
    let body = json_body(body)?;
    let reveal = state.reveal_debug;
    let session = blocking(move || {
        let session = state.engine.start_session(&body.persona_id)?;
        let snapshot = state.engine.persona(&session.persona_id)?.snapshot_id();
        state.store.save_session(&session, &snapshot)?;
        Ok(session)
    })
    .await?;
    let opening_line = session.turns[0].text.clone();
    Ok((
        StatusCode::CREATED,
        Json(CreatedSession {
            session: session_view(&session, reveal),
            opening_line,
        }),
    ))
}

#[derive(Debug, Deserialize)]
pub struct ListQuery {
    pub persona_id: Option<String>,
    pub status: Option<String>,
}

async fn list_sessions(
    State(state): State<AppState>,
    Query(query): Query<ListQuery>,
) -> Result<Json<Vec<SessionSummary>>, ApiError> {
    let status = query
        .status
        .map(|s| s.parse::<SessionStatus>())
        .transpose()
        .map_err(ApiError::validation)?;
    let filter = SessionFilter {
        persona_id: query.persona_id,
        status,
    };
    let list = blocking(move || Ok(state.store.list_sessions(&filter)?)).await?;
    Ok(Json(list))
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let reveal = state.reveal_debug;
    let session = blocking(move || Ok(state.store.load_session(&id)?)).await?;
    Ok(Json(session_view(&session, reveal)))
}

enum TurnOp {
    Message(String),
    Identify(String),
    Abandon,
}

/// Runs one state-changing operation under the session lock and publishes
/// terminal events before returning.
async fn run_turn(
    state: &AppState,
    id: String,
    op: TurnOp,
) -> Result<(Session, Option<BotResponse>), ApiError> {
    validate_id(&id)?;
    let st = state.clone();
    let (session, response) = blocking(move || {
        let _guard = st.locks.try_acquire(&id)?;
        let mut session = st.store.load_session(&id)?;
        let snapshot = st.engine.persona(&session.persona_id)?.snapshot_id();
        let response = match op {
            TurnOp::Message(text) => Some(st.engine.process_turn(&mut session, &text)?),
            TurnOp::Identify(technique) => Some(st.engine.identify(&mut session, &technique)?),
            TurnOp::Abandon => {
                st.engine.abandon(&mut session)?;
                None
            }
        };
        st.store.save_session(&session, &snapshot)?;
        Ok((session, response))
    })
    .await?;
    state
        .events
        .publish(&session.id, terminal_events(&session))
        .await;
    Ok((session, response))
}

#[derive(Debug, Deserialize)]
pub struct MessageBody {
    pub text: String,
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<MessageBody>, JsonRejection>,
) -> Result<Json<TurnReply>, ApiError> {
    let body = json_body(body)?;
    let (session, response) = run_turn(&state, id, TurnOp::Message(body.text)).await?;
    Ok(Json(TurnReply {
        response: response.expect("message turns produce a reply"),
        debug: debug_view(&session, state.reveal_debug),
    }))
}

#[derive(Debug, Deserialize)]
pub struct IdentifyBody {
    pub technique_id: String,
}

async fn post_identify(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<IdentifyBody>, JsonRejection>,
) -> Result<Json<TurnReply>, ApiError> {
    let body = json_body(body)?;
    let (session, response) = run_turn(&state, id, TurnOp::Identify(body.technique_id)).await?;
    Ok(Json(TurnReply {
        response: response.expect("identification turns produce a reply"),
        debug: debug_view(&session, state.reveal_debug),
    }))
}

async fn post_abandon(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let (session, _) = run_turn(&state, id, TurnOp::Abandon).await?;
    Ok(Json(session_view(&session, state.reveal_debug)))
}

fn sse_event(kind: EventKind, payload: &EventPayload) -> Event {
    Event::default()
        .event(kind.as_str())
        .data(serde_json::to_string(payload).expect("event payload serializes"))
}

type EventStream = BoxStream<'static, Result<Event, Infallible>>;

fn replay(session: &Session) -> EventStream {
    let events: Vec<_> = terminal_events(session)
        .into_iter()
        .map(|(kind, payload)| Ok(sse_event(kind, &payload)))
        .collect();
    stream::iter(events).boxed()
}

/// Forwards live events until `concluded`. Each event is acknowledged on
/// the following poll, after the transport has taken the previous frame.
fn live(rx: broadcast::Receiver<SessionEvent>) -> EventStream {
    stream::unfold(
        (rx, None::<SessionEvent>, false),
        |(mut rx, pending, done)| async move {
            if let Some(ev) = pending {
                ev.acknowledge();
            }
            if done {
                return None;
            }
            loop {
                match rx.recv().await {
                    Ok(ev) => {
                        let item = Ok(sse_event(ev.kind, &ev.payload));
                        let done = ev.kind == EventKind::Concluded;
                        return Some((item, (rx, Some(ev), done)));
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            }
        },
    )
    .boxed()
}

async fn session_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    validate_id(&id)?;
    let st = state.clone();
    let lookup = id.clone();
    let session = blocking(move || Ok(st.store.load_session(&lookup)?)).await?;
    let stream = if session.status.is_finished() {
        replay(&session)
    } else {
        let rx = state.events.subscribe(&id);
        // Re-read after subscribing so a turn finishing in between is seen.
        let st = state.clone();
        let session = blocking(move || Ok(st.store.load_session(&id)?)).await?;
        if session.status.is_finished() {
            replay(&session)
        } else {
            live(rx)
        }
    };
    Ok(Sse::new(stream)
        .keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
        .into_response())
}

#[derive(Debug, Deserialize)]
pub struct TranscriptQuery {
    pub format: Option<String>,
}

async fn transcript(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<TranscriptQuery>,
) -> Result<Response, ApiError> {
    let format = query.format.unwrap_or_else(|| "text".to_string());
    let reveal = state.reveal_debug;
    let is_text = format == "text";
    let body = blocking(move || {
        let session = state.store.load_session(&id)?;
        let initial = state
            .engine
            .persona(&session.persona_id)
            .map(|p| p.belief_params.initial_belief)
            .unwrap_or(session.belief);
        Ok(state
            .store
            .export_transcript(&id, &format, initial, !reveal)?)
    })
    .await?;
    let content_type = if is_text {
        "text/plain; charset=utf-8"
    } else {
        "application/json"
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

#[derive(Debug, Deserialize)]
pub struct QuestionnaireBody {
    pub scores: BTreeMap<String, i64>,
}

async fn submit_questionnaire(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<QuestionnaireBody>, JsonRejection>,
) -> Result<(StatusCode, Json<QuestionnaireResponse>), ApiError> {
    let body = json_body(body)?;
    let mut scores = BTreeMap::new();
    for (item, value) in body.scores {
        let value = u8::try_from(value).map_err(|_| {
            ApiError::validation(format!("score {value} for `{item}` outside 1..=7"))
        })?;
        scores.insert(item, value);
    }
    let response = blocking(move || {
        Ok(state
            .store
            .submit_questionnaire(&id, scores, Some(&state.scales))?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(response)))
}

async fn questionnaire_items(State(state): State<AppState>) -> Json<QuestionnaireScales> {
    Json((*state.scales).clone())
}

async fn questionnaire_stats(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<QuestionnaireStats>, ApiError> {
    state.engine.persona(&id)?;
    let stats = blocking(move || Ok(state.store.questionnaire_stats(&id)?)).await?;
    Ok(Json(stats))
}
