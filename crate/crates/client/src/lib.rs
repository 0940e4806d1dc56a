//! Minimal nearest-cache query tool.
//!
//! Performs one `GET /nearest?count=N` and prints the result either as a
//! proxy fallback chain (`http://h1:p1;http://h2:p2`) or a table.

use std::fmt::Write;
use std::str::FromStr;
use std::time::Duration;

use shoal_core::NearestResponse;
use thiserror::Error;

pub const TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_COUNT: usize = 5;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const NETWORK: i32 = 2;
    pub const EMPTY: i32 = 3;
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("count must be at least 1")]
    BadCount,
    #[error("cannot reach {url}: {source}")]
    Network { url: String, source: reqwest::Error },
    #[error("{url} answered {status}")]
    Status { url: String, status: u16 },
    #[error("unreadable response from {url}: {reason}")]
    Body { url: String, reason: String },
    #[error("the server returned no caches")]
    Empty,
}

impl ClientError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::BadCount => exit::USAGE,
            ClientError::Empty => exit::EMPTY,
            _ => exit::NETWORK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Proxy,
    Table,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proxy" => Ok(Format::Proxy),
            "table" => Ok(Format::Table),
            other => Err(format!("unknown format `{other}` (expected proxy or table)")),
        }
    }
}

pub fn nearest_url(server_url: &str, count: usize) -> String {
    format!("{}/nearest?count={count}", server_url.trim_end_matches('/'))
}

/// One request to `/nearest`, 5 s timeout.
pub fn fetch_nearest(server_url: &str, count: usize) -> Result<NearestResponse, ClientError> {
    if count == 0 {
        return Err(ClientError::BadCount);
    }
    let url = nearest_url(server_url, count);
    let network = |source| ClientError::Network {
        url: url.clone(),
        source,
    };
    let client = reqwest::blocking::Client::builder()
        .timeout(TIMEOUT)
        .build()
        .map_err(network)?;
    let resp = client.get(&url).send().map_err(network)?;
    if !resp.status().is_success() {
        return Err(ClientError::Status {
            url,
            status: resp.status().as_u16(),
        });
    }
    let body = resp.bytes().map_err(network)?;
    serde_json::from_slice(&body).map_err(|e| ClientError::Body {
        url,
        reason: e.to_string(),
    })
}

/// `http://h1:p1;http://h2:p2;...` in response order; empty for no caches.
pub fn emit_proxy_string(resp: &NearestResponse) -> String {
    resp.entries()
        .iter()
        .map(|e| format!("http://{}:{}", e.hostname, e.port))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn render_table(resp: &NearestResponse) -> String {
    let mut out = format!(
        "{:<40} {:<15} {:>5} {:>12} {:>8} {:>10}\n",
        "HOSTNAME", "PUBLIC_IP", "PORT", "DISTANCE_KM", "LOAD", "LAST_SEEN"
    );
    for e in resp.entries() {
        let distance = e.distance_km.map_or_else(|| "-".to_owned(), |d| format!("{d:.1}"));
        let _ = writeln!(
            out,
            "{:<40} {:<15} {:>5} {:>12} {:>8.2} {:>9.0}s",
            e.hostname, e.public_ip, e.port, distance, e.load, e.last_active_s
        );
    }
    out
}

/// Fetches and formats. An empty list is reported as [`ClientError::Empty`].
pub fn query(server_url: &str, count: usize, format: Format) -> Result<String, ClientError> {
    let resp = fetch_nearest(server_url, count)?;
    if resp.is_empty() {
        return Err(ClientError::Empty);
    }
    Ok(match format {
        Format::Proxy => emit_proxy_string(&resp),
        Format::Table => render_table(&resp),
    })
}
