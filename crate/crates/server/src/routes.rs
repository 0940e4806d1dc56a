use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::extract::{ConnectInfo, DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bytes::Bytes;
use serde::Deserialize;
use shoal_core::pac::{pac_script, MAX_PAC_PROXIES};
use shoal_core::registry::CacheRecord;
use shoal_core::wire::MAX_HEARTBEAT_BYTES;
use shoal_core::BrokerError;
use tracing::info;

use crate::state::AppState;
use crate::status;

pub const DEFAULT_COUNT: usize = 5;
pub const MAX_COUNT: usize = 100;
pub const PAC_CONTENT_TYPE: &str = "application/x-ns-proxy-autoconfig";

type SharedState = Arc<AppState>;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/", get(status_page))
        .route("/nearest", get(nearest))
        .route("/wpad.dat", get(wpad))
        .route("/api/squids", get(squids))
        .route("/api/stats", get(stats))
        .route(
            "/publish/{exchange}/{routing_key}",
            post(publish).layer(DefaultBodyLimit::max(MAX_HEARTBEAT_BYTES)),
        )
        .layer(middleware::from_fn_with_state(Arc::clone(&state), access_log))
        .with_state(state)
}

#[derive(Debug)]
enum ApiError {
    BadRequest(String),
    NotFound(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::BadRequest(msg) => (StatusCode::BAD_REQUEST, msg).into_response(),
            ApiError::NotFound(msg) => (StatusCode::NOT_FOUND, msg).into_response(),
        }
    }
}

/// Client address for ranking: the first `X-Forwarded-For` hop when trusted,
/// otherwise the socket peer. `Ok(None)` for peers with no IPv4 form.
fn client_ip(state: &AppState, peer: SocketAddr, headers: &HeaderMap) -> Result<Option<Ipv4Addr>, ApiError> {
    let ip = match forwarded_for(state, headers) {
        Some(first) => first
            .parse::<IpAddr>()
            .map_err(|_| ApiError::BadRequest(format!("malformed X-Forwarded-For address `{first}`\n")))?,
        None => peer.ip(),
    };
    Ok(match ip {
        IpAddr::V4(v4) => Some(v4),
        IpAddr::V6(v6) => v6.to_ipv4_mapped(),
    })
}

fn forwarded_for<'a>(state: &AppState, headers: &'a HeaderMap) -> Option<&'a str> {
    if !state.config.trust_xff {
        return None;
    }
    headers
        .get("x-forwarded-for")?
        .to_str()
        .ok()?
        .split(',')
        .next()
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

#[derive(Debug, Deserialize)]
struct NearestQuery {
    count: Option<String>,
}

fn parse_count(raw: Option<&str>) -> Result<usize, ApiError> {
    let Some(raw) = raw else {
        return Ok(DEFAULT_COUNT);
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if (1..=MAX_COUNT).contains(&n) => Ok(n),
        _ => Err(ApiError::BadRequest(format!(
            "count must be an integer in 1..={MAX_COUNT}\n"
        ))),
    }
}

async fn nearest(
    State(state): State<SharedState>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    headers: HeaderMap,
    Query(query): Query<NearestQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let count = parse_count(query.count.as_deref())?;
    let client = client_ip(&state, peer, &headers)?;
    let lookup = state.lookup(client, count);
    Ok(Json(state.nearest_response(&lookup)))
}

async fn wpad(
    State(state): State<SharedState>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    headers: HeaderMap,
) -> Result<impl IntoResponse, ApiError> {
    let client = client_ip(&state, peer, &headers)?;
    let lookup = state.lookup(client, MAX_PAC_PROXIES);
    let body = pac_script(lookup.records.iter().map(|r| (r.hostname.as_str(), r.port)));
    Ok(([(header::CONTENT_TYPE, PAC_CONTENT_TYPE)], body))
}

fn live_records(state: &AppState) -> Vec<Arc<CacheRecord>> {
    let now = state.now();
    let ttl = state.config.ttl_s;
    state
        .registry
        .snapshot()
        .records
        .into_iter()
        .filter(|r| r.is_live(now, ttl))
        .collect()
}

async fn squids(State(state): State<SharedState>) -> impl IntoResponse {
    let records = live_records(&state);
    let body: Vec<&CacheRecord> = records.iter().map(Arc::as_ref).collect();
    Json(serde_json::to_value(body).expect("records serialize"))
}

async fn stats(State(state): State<SharedState>) -> impl IntoResponse {
    Json(state.stats())
}

async fn status_page(State(state): State<SharedState>) -> Html<String> {
    let records = live_records(&state);
    Html(status::render(&records, state.config.location, state.now()))
}

async fn publish(
    State(state): State<SharedState>,
    Path((exchange, routing_key)): Path<(String, String)>,
    body: Bytes,
) -> Result<StatusCode, ApiError> {
    match state.broker.publish(&exchange, &routing_key, body) {
        Ok(_) => Ok(StatusCode::NO_CONTENT),
        Err(err @ BrokerError::UnknownExchange(_)) => Err(ApiError::NotFound(format!("{err}\n"))),
        Err(err) => Err(ApiError::BadRequest(format!("{err}\n"))),
    }
}

/// One line per request: unix time, client, path, status, latency in µs.
async fn access_log(
    State(state): State<SharedState>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    req: Request,
    next: Next,
) -> Response {
    if !state.config.access_log {
        return next.run(req).await;
    }
    let start = Instant::now();
    let path = req.uri().path().to_owned();
    let client = forwarded_for(&state, req.headers())
        .map(str::to_owned)
        .unwrap_or_else(|| peer.ip().to_string());
    let resp = next.run(req).await;
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default()
        .as_secs_f64();
    info!(
        target: "shoal::access",
        "{ts:.6} {client} {path} {} {}",
        resp.status().as_u16(),
        start.elapsed().as_micros()
    );
    resp
}
