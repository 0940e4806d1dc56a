//! Load generation and measurement against a shoal server.
//!
//! * [`populate`] registers a deterministic synthetic fleet through the real
//!   heartbeat ingestion endpoint.
//! * [`run_http_load`] is a closed-loop `/nearest` load generator: each
//!   worker issues its next request as soon as the previous one returns.
//! * [`run_ingest_load`] publishes heartbeats at a paced rate and accounts
//!   for every message via `/api/stats`.
//! * [`sweep`] measures mean latency against registries of increasing size
//!   and [`fit_slope`] fits a line through the result.

pub mod fleet;

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use shoal_server::{start_with_locator, ServerConfig, ServerHandle, StatsSnapshot};
use thiserror::Error;
use tokio::sync::Semaphore;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server answered {status} for {what}")]
    Status { status: u16, what: &'static str },
    #[error("starting embedded server: {0}")]
    Server(#[from] shoal_server::ServerError),
    #[error("need at least 3 points to fit, got {0}")]
    TooFewPoints(usize),
    #[error("all points share one x value; slope is undefined")]
    DegenerateX,
    #[error("{0}")]
    Invalid(String),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
}

fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .expect("http client")
}

pub async fn fetch_stats(client: &reqwest::Client, server_url: &str) -> Result<StatsSnapshot, BenchError> {
    let resp = client.get(format!("{server_url}/api/stats")).send().await?;
    if !resp.status().is_success() {
        return Err(BenchError::Status {
            status: resp.status().as_u16(),
            what: "/api/stats",
        });
    }
    Ok(resp.json().await?)
}

/// Server settings used for benchmark runs: trusts `X-Forwarded-For` so
/// synthetic clients can spread over subnets, keeps the synthetic fleet
/// alive for the whole run, and skips access logging.
pub fn bench_server_config(cache_enabled: bool) -> ServerConfig {
    ServerConfig {
        bind: "127.0.0.1".parse().expect("literal"),
        port: 0,
        trust_xff: true,
        ttl_s: 86_400.0,
        sweep_s: 3_600.0,
        cache_enabled,
        access_log: false,
        ..ServerConfig::default()
    }
}

/// Starts an in-process server with the synthetic locator table.
pub async fn start_embedded(config: ServerConfig) -> Result<ServerHandle, BenchError> {
    Ok(start_with_locator(config, fleet::locator()).await?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulateReport {
    pub n: usize,
    pub seed: u64,
    pub applied: u64,
    pub elapsed_s: f64,
}

/// Publishes the first `n` synthetic caches for `seed` and waits until the
/// server has applied them.
pub async fn populate(server_url: &str, n: usize, seed: u64) -> Result<PopulateReport, BenchError> {
    let client = http_client();
    let start = Instant::now();
    let before = fetch_stats(&client, server_url).await?;
    let url = format!(
        "{server_url}/publish/{}/{}",
        shoal_core::DEFAULT_EXCHANGE,
        shoal_core::DEFAULT_ROUTING_KEY
    );
    let results: Vec<Result<(), BenchError>> = futures::stream::iter(fleet::fleet(seed, n))
        .map(|hb| {
            let (client, url) = (client.clone(), url.clone());
            async move {
                let resp = client.post(&url).body(hb.encode()).send().await?;
                if resp.status().is_success() {
                    Ok(())
                } else {
                    Err(BenchError::Status {
                        status: resp.status().as_u16(),
                        what: "publish",
                    })
                }
            }
        })
        .buffer_unordered(32)
        .collect()
        .await;
    results.into_iter().collect::<Result<Vec<()>, _>>()?;
    let target = before.heartbeats_total + n as u64;
    let applied = wait_for(&client, server_url, Duration::from_secs(60), |s| {
        s.heartbeats_total >= target
    })
    .await?
    .heartbeats_total
        - before.heartbeats_total;
    Ok(PopulateReport {
        n,
        seed,
        applied,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

async fn wait_for(
    client: &reqwest::Client,
    server_url: &str,
    timeout: Duration,
    done: impl Fn(&StatsSnapshot) -> bool,
) -> Result<StatsSnapshot, BenchError> {
    let deadline = Instant::now() + timeout;
    loop {
        let s = fetch_stats(client, server_url).await?;
        if done(&s) {
            return Ok(s);
        }
        if Instant::now() > deadline {
            return Err(BenchError::Timeout("server to apply heartbeats"));
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

/// Where `/nearest` requests appear to come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClientSpread {
    /// Each worker sends `X-Forwarded-For` with its own synthetic /24.
    PerWorker,
    /// No header; the server sees the socket peer.
    Peer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub concurrency: usize,
    pub duration: Duration,
    pub count: usize,
    pub spread: ClientSpread,
}

impl LoadOptions {
    pub fn new(concurrency: usize, duration: Duration) -> Self {
        Self {
            concurrency,
            duration,
            count: 5,
            spread: ClientSpread::PerWorker,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub concurrency: usize,
    pub duration_s: f64,
    pub completed: u64,
    pub errors: u64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub rps: f64,
}

/// Nearest-rank percentile of an ascending slice; 0 for an empty one.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LoadReport {
    /// Summarizes successful-request latencies (ms) from a run of
    /// `duration_s` seconds.
    pub fn from_latencies(concurrency: usize, duration_s: f64, mut latencies_ms: Vec<f64>, errors: u64) -> Self {
        latencies_ms.sort_unstable_by(f64::total_cmp);
        let completed = latencies_ms.len() as u64;
        let mean_ms = if latencies_ms.is_empty() {
            0.0
        } else {
            latencies_ms.iter().sum::<f64>() / latencies_ms.len() as f64
        };
        Self {
            concurrency,
            duration_s,
            completed,
            errors,
            mean_ms,
            p50_ms: percentile(&latencies_ms, 50.0),
            p95_ms: percentile(&latencies_ms, 95.0),
            rps: completed as f64 / duration_s,
        }
    }
}

/// Closed-loop `/nearest` load. Requests still in flight when the window
/// closes are not counted.
pub async fn run_http_load(server_url: &str, opts: &LoadOptions) -> Result<LoadReport, BenchError> {
    if opts.concurrency == 0 {
        return Err(BenchError::Invalid("concurrency must be at least 1".into()));
    }
    let url = Arc::new(format!("{server_url}/nearest?count={}", opts.count));
    let start = tokio::time::Instant::now();
    let deadline = start + opts.duration;
    let mut workers = Vec::with_capacity(opts.concurrency);
    for w in 0..opts.concurrency {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .pool_max_idle_per_host(1)
            .build()?;
        let url = Arc::clone(&url);
        let xff = (opts.spread == ClientSpread::PerWorker).then(|| fleet::client_ip(w).to_string());
        workers.push(tokio::spawn(async move {
            let mut latencies = Vec::new();
            let mut errors = 0u64;
            loop {
                let sent = tokio::time::Instant::now();
                if sent >= deadline {
                    break;
                }
                let mut req = client.get(url.as_str());
                if let Some(ip) = &xff {
                    req = req.header("X-Forwarded-For", ip);
                }
                let ok = match tokio::time::timeout_at(deadline, req.send()).await {
                    Ok(Ok(resp)) => {
                        let status = resp.status();
                        match tokio::time::timeout_at(deadline, resp.bytes()).await {
                            Ok(body) => status.is_success() && body.is_ok(),
                            Err(_) => break,
                        }
                    }
                    Ok(Err(_)) => false,
                    Err(_) => break,
                };
                let done = tokio::time::Instant::now();
                if done > deadline {
                    break;
                }
                if ok {
                    latencies.push((done - sent).as_secs_f64() * 1e3);
                } else {
                    errors += 1;
                }
            }
            (latencies, errors)
        }));
    }
    let mut latencies = Vec::new();
    let mut errors = 0;
    for w in workers {
        let (l, e) = w.await.expect("load worker panicked");
        latencies.extend(l);
        errors += e;
    }
    Ok(LoadReport::from_latencies(
        opts.concurrency,
        opts.duration.as_secs_f64(),
        latencies,
        errors,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SendOutcome {
    pub sent: u64,
    /// Publishes that did not get a success status.
    pub failed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rate_per_min: u64,
    pub duration_s: f64,
    pub sent: u64,
    pub applied: u64,
    /// Lost to queue overflow, discard, or failed publish.
    pub dropped: u64,
    pub malformed: u64,
    pub elapsed_s: f64,
}

/// Number of messages a paced run sends.
pub fn planned_messages(rate_per_min: u64, duration: Duration) -> u64 {
    (rate_per_min as f64 * duration.as_secs_f64() / 60.0).round() as u64
}

/// Publishes heartbeats at `rate_per_min`, message `i` scheduled at
/// `i * 60 / rate` seconds. Each synthetic agent reports twice a minute.
pub async fn send_paced(
    server_url: &str,
    rate_per_min: u64,
    duration: Duration,
    seed: u64,
) -> Result<SendOutcome, BenchError> {
    if rate_per_min == 0 {
        return Err(BenchError::Invalid("rate must be at least 1 per minute".into()));
    }
    let total = planned_messages(rate_per_min, duration);
    let agents = fleet::fleet(seed, (rate_per_min as usize / 2).max(1));
    let bodies: Arc<Vec<Vec<u8>>> = Arc::new(agents.iter().map(|hb| hb.encode()).collect());
    let url = Arc::new(format!(
        "{server_url}/publish/{}/{}",
        shoal_core::DEFAULT_EXCHANGE,
        shoal_core::DEFAULT_ROUTING_KEY
    ));
    let client = http_client();
    let gate = Arc::new(Semaphore::new(64));
    let spacing = Duration::from_secs_f64(60.0 / rate_per_min as f64);
    let start = tokio::time::Instant::now();
    let mut tasks = Vec::with_capacity(total as usize);
    for i in 0..total {
        tokio::time::sleep_until(start + spacing.mul_f64(i as f64)).await;
        let permit = Arc::clone(&gate).acquire_owned().await.expect("semaphore open");
        let (client, url, bodies) = (client.clone(), Arc::clone(&url), Arc::clone(&bodies));
        tasks.push(tokio::spawn(async move {
            let body = bodies[i as usize % bodies.len()].clone();
            let ok = matches!(client.post(url.as_str()).body(body).send().await, Ok(r) if r.status().is_success());
            drop(permit);
            ok
        }));
    }
    let mut failed = 0;
    for t in tasks {
        if !t.await.unwrap_or(false) {
            failed += 1;
        }
    }
    Ok(SendOutcome { sent: total, failed })
}

/// Waits until every message from `outcome` is accounted for in the
/// server counters relative to `before`.
pub async fn settle(
    server_url: &str,
    before: StatsSnapshot,
    outcome: SendOutcome,
    rate_per_min: u64,
    duration: Duration,
    started: Instant,
) -> Result<IngestReport, BenchError> {
    let client = http_client();
    let accepted = outcome.sent - outcome.failed;
    let accounted = |s: &StatsSnapshot| {
        (s.heartbeats_total - before.heartbeats_total)
            + (s.malformed_total - before.malformed_total)
            + (s.queue_dropped_total - before.queue_dropped_total)
            + (s.discarded_total - before.discarded_total)
    };
    let after = wait_for(&client, server_url, Duration::from_secs(60), |s| {
        accounted(s) >= accepted
    })
    .await?;
    Ok(IngestReport {
        rate_per_min,
        duration_s: duration.as_secs_f64(),
        sent: outcome.sent,
        applied: after.heartbeats_total - before.heartbeats_total,
        dropped: (after.queue_dropped_total - before.queue_dropped_total)
            + (after.discarded_total - before.discarded_total)
            + outcome.failed,
        malformed: after.malformed_total - before.malformed_total,
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

/// Paced ingestion followed by [`settle`].
pub async fn run_ingest_load(
    server_url: &str,
    rate_per_min: u64,
    duration: Duration,
) -> Result<IngestReport, BenchError> {
    let started = Instant::now();
    let before = fetch_stats(&http_client(), server_url).await?;
    let outcome = send_paced(server_url, rate_per_min, duration, 0x1_9E57).await?;
    settle(server_url, before, outcome, rate_per_min, duration, started).await
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope_ms_per_1000: f64,
    pub intercept_ms: f64,
    pub r2: f64,
}

/// Least-squares line through `(n, mean_ms)` points.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit, BenchError> {
    if points.len() < 3 {
        return Err(BenchError::TooFewPoints(points.len()));
    }
    let len = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / len;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx <= f64::EPSILON * mean_x.abs().max(1.0) {
        return Err(BenchError::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points.iter().map(|p| (p.1 - (intercept + slope * p.0)).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    // A flat series is fitted exactly by a flat line.
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(SlopeFit {
        slope_ms_per_1000: slope * 1000.0,
        intercept_ms: intercept,
        r2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub report: LoadReport,
}

/// For each registry size, starts a fresh embedded server, populates it,
/// warms it up briefly and measures `/nearest` under `opts`.
pub async fn sweep(
    n_list: &[usize],
    opts: &LoadOptions,
    cache_enabled: bool,
    seed: u64,
) -> Result<Vec<SweepPoint>, BenchError> {
    let mut points = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let server = start_embedded(bench_server_config(cache_enabled)).await?;
        let url = server.url();
        populate(&url, n, seed).await?;
        let warmup = LoadOptions {
            duration: Duration::from_millis(500),
            ..opts.clone()
        };
        run_http_load(&url, &warmup).await?;
        let report = run_http_load(&url, opts).await?;
        server.shutdown().await;
        points.push(SweepPoint { n, report });
    }
    Ok(points)
}

/// Appends one JSON line `{"kind", "unix_time", "params", "metrics"}`.
pub fn append_report(
    path: &Path,
    kind: &str,
    params: &impl Serialize,
    metrics: &impl Serialize,
) -> Result<(), BenchError> {
    let line = serde_json::json!({
        "kind": kind,
        "unix_time": SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_secs_f64(),
        "params": params,
        "metrics": metrics,
    });
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(file, "{line}")?;
    Ok(())
}
