//! HTTP front end: `POST /generate` and `POST /timerange-change`.
//!
//! The server keeps no session. Every request carries the whole sheet with
//! its fermatas and chords, and the response depends only on the body, the
//! query and the seed.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use tower_http::cors::CorsLayer;

use inpaint_core::engine::{generate_sheet, inpaint_sheet, EngineError, ModelSet, Rung};
use inpaint_core::musicxml::{parse_musicxml, serialize_musicxml, MusicXmlError, MUSICXML_MIME};
use inpaint_core::score::{validate_sheet, Mode, ScoreError, TimeRange, TimeSignature};

pub const SEED_HEADER: &str = "x-inpaint-seed";
pub const RUNG_HEADER: &str = "x-inpaint-relaxation-rung";
pub const DEFAULT_MEASURES: usize = 8;
pub const MAX_MEASURES: usize = 64;
const BODY_LIMIT: usize = 16 << 20;

#[derive(Clone)]
pub struct AppState {
    models: Arc<ModelSet>,
    default_mode: Option<Mode>,
}

impl AppState {
    /// `default_mode` is used by `/generate` when the request names none.
    pub fn new(models: ModelSet, default_mode: Option<Mode>) -> AppState {
        AppState {
            models: Arc::new(models),
            default_mode,
        }
    }
}

pub fn app(state: AppState) -> Router {
    Router::new()
        .route("/generate", post(handle_generate))
        .route("/timerange-change", post(handle_timerange_change))
        .route("/status", get(handle_status))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves `app` until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, app(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        log::info!("{} {}", self.0.as_u16(), self.1);
        (self.0, [(header::CONTENT_TYPE, "text/plain; charset=utf-8")], self.1 + "\n").into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn unprocessable(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::UNPROCESSABLE_ENTITY, msg.into())
}

fn from_musicxml(e: MusicXmlError) -> ApiError {
    match e {
        MusicXmlError::Xml(_) => bad_request(e.to_string()),
        _ => unprocessable(e.to_string()),
    }
}

fn from_engine(e: EngineError) -> ApiError {
    match e {
        EngineError::MissingModel(_) | EngineError::MissingChordModel(_) => {
            ApiError(StatusCode::SERVICE_UNAVAILABLE, e.to_string())
        }
        EngineError::InvalidSheet(_) | EngineError::Score(_) => unprocessable(e.to_string()),
        _ => ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

fn seed_param(q: &HashMap<String, String>) -> Result<u64, ApiError> {
    match q.get("seed") {
        Some(s) => s.parse().map_err(|_| bad_request(format!("seed {s:?} is not a 64-bit unsigned integer"))),
        None => Ok(rand::random()),
    }
}

fn musicxml_response(doc: Vec<u8>, seed: u64, rung: Option<Rung>) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static(MUSICXML_MIME));
    headers.insert(SEED_HEADER, HeaderValue::from(seed));
    if let Some(r) = rung {
        headers.insert(RUNG_HEADER, HeaderValue::from(u16::from(r.level())));
    }
    (StatusCode::OK, headers, doc).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))
}

async fn handle_status(State(state): State<AppState>) -> Response {
    let modes: Vec<&str> = [Mode::Chorale, Mode::Leadsheet]
        .into_iter()
        .filter(|m| state.models.supports(*m))
        .map(|m| m.as_str())
        .collect();
    let body = format!("{{\"modes\":[{}]}}\n", modes.iter().map(|m| format!("\"{m}\"")).collect::<Vec<_>>().join(","));
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn handle_generate(
    State(state): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let mode = match (q.get("mode"), state.default_mode) {
        (Some(m), _) => m.parse::<Mode>().map_err(|_| bad_request(format!("unknown mode {m:?}")))?,
        (None, Some(m)) => m,
        (None, None) => return Err(bad_request("mode is required")),
    };
    let measures = match q.get("measures") {
        Some(s) => s
            .parse::<usize>()
            .map_err(|_| bad_request(format!("measures {s:?} is not a whole number")))?,
        None => DEFAULT_MEASURES,
    };
    if !(1..=MAX_MEASURES).contains(&measures) {
        return Err(bad_request(format!("measures must be in 1..={MAX_MEASURES}, got {measures}")));
    }
    let seed = seed_param(&q)?;
    if !state.models.supports(mode) {
        return Err(ApiError(
            StatusCode::SERVICE_UNAVAILABLE,
            format!("no models loaded for {} mode", mode.as_str()),
        ));
    }
    let models = Arc::clone(&state.models);
    let doc = blocking(move || {
        let sheet = generate_sheet(&models, mode, measures, TimeSignature::COMMON, seed).map_err(from_engine)?;
        serialize_musicxml(&sheet).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
    })
    .await??;
    log::info!("generate mode={} measures={measures} seed={seed}", mode.as_str());
    Ok(musicxml_response(doc, seed, None))
}

fn check_content_type(headers: &HeaderMap) -> Result<(), ApiError> {
    let Some(ct) = headers.get(header::CONTENT_TYPE) else {
        return Ok(());
    };
    let essence = ct
        .to_str()
        .unwrap_or("")
        .split(';')
        .next()
        .unwrap_or("")
        .trim()
        .to_ascii_lowercase();
    if [MUSICXML_MIME, "application/xml", "text/xml"].contains(&essence.as_str()) {
        Ok(())
    } else {
        Err(ApiError(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            format!("expected {MUSICXML_MIME} or application/xml, got {essence:?}"),
        ))
    }
}

fn quarter_param(q: &HashMap<String, String>, name: &str) -> Result<f64, ApiError> {
    let s = q.get(name).ok_or_else(|| bad_request(format!("{name} is required")))?;
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad_request(format!("{name} {s:?} is not a decimal number")))
}

fn voices_param(q: &HashMap<String, String>, count: usize) -> Result<Vec<usize>, ApiError> {
    match q.get("voices").map(|s| s.trim()) {
        None | Some("") => Ok((0..count).collect()),
        Some(s) => s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| bad_request(format!("voice index {v:?} is not a whole number")))
            })
            .collect(),
    }
}

async fn handle_timerange_change(
    State(state): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    check_content_type(&headers)?;
    let start = quarter_param(&q, "start")?;
    let end = quarter_param(&q, "end")?;
    let seed = seed_param(&q)?;
    let models = Arc::clone(&state.models);
    let q2 = q.clone();
    let (doc, rung) = blocking(move || -> Result<_, ApiError> {
        let sheet = parse_musicxml(&body).map_err(from_musicxml)?;
        let violations = validate_sheet(&sheet);
        if !violations.is_empty() {
            return Err(from_engine(EngineError::InvalidSheet(violations)));
        }
        let voices = voices_param(&q2, sheet.voices.len())?;
        let range = TimeRange::from_quarters(start, end, voices).map_err(|e| unprocessable(e.to_string()))?;
        range.check(&sheet).map_err(|e: ScoreError| unprocessable(e.to_string()))?;
        if !models.supports(sheet.mode) {
            return Err(ApiError(
                StatusCode::SERVICE_UNAVAILABLE,
                format!("no models loaded for {} mode", sheet.mode.as_str()),
            ));
        }
        let outcome = inpaint_sheet(&sheet, &range, &models, seed).map_err(from_engine)?;
        let doc = serialize_musicxml(&outcome.sheet)
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        Ok((doc, outcome.max_rung()))
    })
    .await??;
    log::info!(
        "timerange-change start={start} end={end} voices={} seed={seed} rung={}",
        q.get("voices").map_or("all", |v| v.as_str()),
        rung.level()
    );
    Ok(musicxml_response(doc, seed, Some(rung)))
}
