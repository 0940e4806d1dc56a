//! Heartbeat daemon run beside a cache server.
//!
//! Every interval (±10% jitter) the agent builds a [`Heartbeat`] carrying its
//! persistent id, hostname, public address, advertised port and current load
//! and POSTs it to the server's broker ingestion endpoint. A failed publish
//! is logged and forgotten; the next tick sends a fresh heartbeat.

mod load;

use std::future::Future;
use std::net::{IpAddr, Ipv4Addr, ToSocketAddrs, UdpSocket};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::Rng;
use shoal_core::wire::is_valid_hostname;
use shoal_core::{ConfigError, Heartbeat, Settings, DEFAULT_EXCHANGE, DEFAULT_INTERVAL_S, DEFAULT_ROUTING_KEY};
use thiserror::Error;
use tokio::time::Instant;
use tracing::{debug, warn};

pub use load::{LoadCollector, LoadSource, LoadSourceParseError};

/// Default advertised cache port.
pub const DEFAULT_CACHE_PORT: u16 = 3128;
/// Maximum jitter as a fraction of the interval.
pub const JITTER_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("agent.server_url is required")]
    MissingServerUrl,
    #[error("agent.interval_s must be at least 1")]
    ZeroInterval,
    #[error(transparent)]
    LoadSource(#[from] LoadSourceParseError),
    #[error("state file {path}: {source}")]
    State { path: PathBuf, source: std::io::Error },
    #[error("hostname `{0}` is not a valid DNS name")]
    Hostname(String),
}

#[derive(Debug, Error)]
pub enum PublishError {
    #[error("cannot determine a public IPv4 address: {0}")]
    Address(String),
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server answered {0}")]
    Status(u16),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub server_url: String,
    pub interval_s: u64,
    pub port: u16,
    pub load_source: LoadSource,
    pub state_path: PathBuf,
    /// Overrides the system hostname.
    pub hostname: Option<String>,
    /// Overrides public address discovery.
    pub public_ip: Option<Ipv4Addr>,
    pub exchange: String,
    pub routing_key: String,
}

impl AgentConfig {
    pub fn new(server_url: impl Into<String>) -> Self {
        Self {
            server_url: server_url.into(),
            interval_s: DEFAULT_INTERVAL_S,
            port: DEFAULT_CACHE_PORT,
            load_source: LoadSource::default(),
            state_path: PathBuf::from("shoal-agent.id"),
            hostname: None,
            public_ip: None,
            exchange: DEFAULT_EXCHANGE.to_owned(),
            routing_key: DEFAULT_ROUTING_KEY.to_owned(),
        }
    }

    /// Reads the `agent.*` keys.
    pub fn from_settings(s: &Settings) -> Result<Self, AgentError> {
        let server_url = s.get_str("agent.server_url").ok_or(AgentError::MissingServerUrl)?;
        let d = Self::new(server_url);
        let interval_s = s.get_or("agent.interval_s", d.interval_s)?;
        if interval_s == 0 {
            return Err(AgentError::ZeroInterval);
        }
        let load_source = match s.get_str("agent.load_source") {
            Some(v) => v.parse()?,
            None => d.load_source.clone(),
        };
        Ok(Self {
            interval_s,
            port: s.get_or("agent.port", d.port)?,
            load_source,
            state_path: s.get_or("agent.state_path", d.state_path.clone())?,
            hostname: s.get_str("agent.hostname").map(str::to_owned),
            public_ip: s.get("agent.public_ip")?,
            exchange: s.get_str("agent.exchange").unwrap_or(&d.exchange).to_owned(),
            routing_key: s.get_str("agent.routing_key").unwrap_or(&d.routing_key).to_owned(),
            ..d
        })
    }

    pub fn publish_url(&self) -> String {
        format!(
            "{}/publish/{}/{}",
            self.server_url.trim_end_matches('/'),
            self.exchange,
            self.routing_key
        )
    }
}

/// Reads the agent id from `path`, creating and persisting a new one if the
/// file does not exist.
pub fn load_or_create_id(path: &Path) -> Result<String, AgentError> {
    let state_err = |source| AgentError::State {
        path: path.to_owned(),
        source,
    };
    match std::fs::read_to_string(path) {
        Ok(text) if !text.trim().is_empty() => return Ok(text.trim().to_owned()),
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(state_err(e)),
    }
    let id = uuid::Uuid::new_v4().to_string();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(state_err)?;
    }
    std::fs::write(path, format!("{id}\n")).map_err(state_err)?;
    Ok(id)
}

/// The system hostname, or `localhost` if it cannot be read.
pub fn system_hostname() -> String {
    std::fs::read_to_string("/proc/sys/kernel/hostname")
        .ok()
        .or_else(|| std::env::var("HOSTNAME").ok())
        .map(|h| h.trim().to_owned())
        .filter(|h| is_valid_hostname(h))
        .unwrap_or_else(|| "localhost".to_owned())
}

/// Local IPv4 address the OS would use to reach `server_url`. No packets
/// are sent.
pub fn local_address_towards(server_url: &str) -> Result<Ipv4Addr, String> {
    let url = reqwest::Url::parse(server_url).map_err(|e| e.to_string())?;
    let host = url.host_str().ok_or("server URL has no host")?;
    let port = url.port_or_known_default().unwrap_or(80);
    let target = (host, port)
        .to_socket_addrs()
        .map_err(|e| e.to_string())?
        .find(|a| a.is_ipv4())
        .ok_or("server has no IPv4 address")?;
    let socket = UdpSocket::bind((Ipv4Addr::UNSPECIFIED, 0)).map_err(|e| e.to_string())?;
    socket.connect(target).map_err(|e| e.to_string())?;
    match socket.local_addr().map_err(|e| e.to_string())?.ip() {
        IpAddr::V4(ip) => Ok(ip),
        IpAddr::V6(ip) => Err(format!("local address {ip} is not IPv4")),
    }
}

/// Transport for heartbeat bodies.
pub trait Publisher {
    fn publish(&self, body: Vec<u8>) -> impl Future<Output = Result<(), PublishError>> + Send;
}

/// Publishes through the server's `/publish/{exchange}/{routing_key}` endpoint.
#[derive(Debug, Clone)]
pub struct HttpPublisher {
    client: reqwest::Client,
    url: String,
}

impl HttpPublisher {
    pub fn new(config: &AgentConfig) -> Self {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(5))
            .build()
            .expect("http client");
        Self {
            client,
            url: config.publish_url(),
        }
    }
}

impl Publisher for HttpPublisher {
    async fn publish(&self, body: Vec<u8>) -> Result<(), PublishError> {
        let resp = self.client.post(&self.url).body(body).send().await?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(PublishError::Status(resp.status().as_u16()))
        }
    }
}

pub struct Agent<P> {
    config: AgentConfig,
    id: String,
    hostname: String,
    publisher: P,
    load: LoadCollector,
    last_timestamp: f64,
    sent: u64,
    failed: u64,
}

impl Agent<HttpPublisher> {
    /// Builds an HTTP agent, loading or creating its persistent id.
    pub fn from_config(config: AgentConfig) -> Result<Self, AgentError> {
        let publisher = HttpPublisher::new(&config);
        Self::with_publisher(config, publisher)
    }
}

impl<P: Publisher> Agent<P> {
    pub fn with_publisher(config: AgentConfig, publisher: P) -> Result<Self, AgentError> {
        let id = load_or_create_id(&config.state_path)?;
        let hostname = config.hostname.clone().unwrap_or_else(system_hostname);
        if !is_valid_hostname(&hostname) {
            return Err(AgentError::Hostname(hostname));
        }
        let load = LoadCollector::new(config.load_source.clone());
        Ok(Self {
            config,
            id,
            hostname,
            publisher,
            load,
            last_timestamp: 0.0,
            sent: 0,
            failed: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn failed(&self) -> u64 {
        self.failed
    }

    pub fn publisher(&self) -> &P {
        &self.publisher
    }

    fn public_ip(&self) -> Result<Ipv4Addr, PublishError> {
        match self.config.public_ip {
            Some(ip) => Ok(ip),
            None => local_address_towards(&self.config.server_url).map_err(PublishError::Address),
        }
    }

    /// Builds the next heartbeat. Timestamps are strictly increasing even
    /// if the wall clock stalls or steps back.
    pub fn heartbeat(&mut self, public_ip: Ipv4Addr) -> Heartbeat {
        let wall = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
            .as_secs_f64();
        let timestamp = if wall > self.last_timestamp {
            wall
        } else {
            self.last_timestamp + 0.001
        };
        self.last_timestamp = timestamp;
        Heartbeat {
            id: self.id.clone(),
            hostname: self.hostname.clone(),
            public_ip,
            port: self.config.port,
            load: self.load.collect(),
            timestamp,
            interval_s: self.config.interval_s,
        }
    }

    /// Publishes one heartbeat.
    pub async fn tick(&mut self) -> Result<(), PublishError> {
        let result = match self.public_ip() {
            Ok(ip) => {
                let body = self.heartbeat(ip).encode();
                self.publisher.publish(body).await
            }
            Err(e) => Err(e),
        };
        match &result {
            Ok(()) => self.sent += 1,
            Err(err) => {
                self.failed += 1;
                warn!(%err, "heartbeat publish failed; retrying next tick");
            }
        }
        result
    }

    /// Runs at the configured interval until `shutdown` resolves.
    pub async fn run(&mut self, shutdown: impl Future<Output = ()>) {
        let interval = Duration::from_secs(self.config.interval_s.max(1));
        self.run_every(interval, shutdown).await
    }

    /// Runs with an explicit base interval. One heartbeat per tick: if a
    /// publish overruns the next deadline, the following tick fires once
    /// immediately rather than catching up.
    pub async fn run_every(&mut self, interval: Duration, shutdown: impl Future<Output = ()>) {
        tokio::pin!(shutdown);
        loop {
            let started = Instant::now();
            let _ = self.tick().await;
            let next = (started + jittered(interval, &mut rand::thread_rng())).max(Instant::now());
            debug!(
                sent = self.sent,
                failed = self.failed,
                "next heartbeat in {:?}",
                next - Instant::now()
            );
            tokio::select! {
                _ = tokio::time::sleep_until(next) => {}
                _ = &mut shutdown => return,
            }
        }
    }
}

/// `interval` scaled by a uniform factor in `[1 - JITTER_FRACTION, 1 + JITTER_FRACTION]`.
pub fn jittered(interval: Duration, rng: &mut impl Rng) -> Duration {
    interval.mul_f64(1.0 + rng.gen_range(-JITTER_FRACTION..=JITTER_FRACTION))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    #[derive(Clone, Default)]
    struct Recorder {
        sends: Arc<Mutex<Vec<(Instant, Heartbeat)>>>,
        stall_first: Option<Duration>,
    }

    impl Publisher for Recorder {
        async fn publish(&self, body: Vec<u8>) -> Result<(), PublishError> {
            let hb = Heartbeat::decode(&body).unwrap();
            let first = {
                let mut sends = self.sends.lock().unwrap();
                sends.push((Instant::now(), hb));
                sends.len() == 1
            };
            if let (true, Some(stall)) = (first, self.stall_first) {
                tokio::time::sleep(stall).await;
            }
            Ok(())
        }
    }

    fn config(dir: &Path) -> AgentConfig {
        AgentConfig {
            state_path: dir.join("state/id"),
            hostname: Some("squid.example.org".into()),
            public_ip: Some(Ipv4Addr::new(142, 104, 5, 9)),
            load_source: LoadSource::Static(2.5),
            ..AgentConfig::new("http://127.0.0.1:8080")
        }
    }

    #[test]
    fn config_from_settings() {
        let s = Settings::parse(
            "agent.server_url=http://shoal:8080/\nagent.interval_s=10\nagent.load_source=static:1.5\nagent.state_path=/var/lib/shoal/id\n",
        )
        .unwrap();
        let c = AgentConfig::from_settings(&s).unwrap();
        assert_eq!(c.interval_s, 10);
        assert_eq!(c.port, 3128);
        assert_eq!(c.load_source, LoadSource::Static(1.5));
        assert_eq!(c.publish_url(), "http://shoal:8080/publish/shoal/squiddata");
        assert!(matches!(
            AgentConfig::from_settings(&Settings::new()),
            Err(AgentError::MissingServerUrl)
        ));
        let zero = Settings::parse("agent.server_url=http://x\nagent.interval_s=0\n").unwrap();
        assert!(matches!(
            AgentConfig::from_settings(&zero),
            Err(AgentError::ZeroInterval)
        ));
    }

    #[test]
    fn id_persists_across_restarts() {
        let dir = tempfile::tempdir().unwrap();
        let a = Agent::with_publisher(config(dir.path()), Recorder::default()).unwrap();
        let b = Agent::with_publisher(config(dir.path()), Recorder::default()).unwrap();
        assert_eq!(a.id(), b.id());
        assert_eq!(a.id().len(), 36);
    }

    #[test]
    fn jitter_bounds() {
        let mut rng = rand::thread_rng();
        for _ in 0..1000 {
            let d = jittered(Duration::from_secs(30), &mut rng);
            assert!(d >= Duration::from_secs(27) && d <= Duration::from_secs(33), "{d:?}");
        }
    }

    #[tokio::test]
    async fn heartbeat_fields_and_monotonic_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let mut agent = Agent::with_publisher(config(dir.path()), Recorder::default()).unwrap();
        let mut last = 0.0;
        for _ in 0..100 {
            let hb = agent.heartbeat(Ipv4Addr::new(142, 104, 5, 9));
            assert!(hb.timestamp > last);
            last = hb.timestamp;
            assert_eq!((hb.port, hb.load, hb.interval_s), (3128, 2.5, 30));
            hb.validate().unwrap();
        }
    }

    #[tokio::test(start_paused = true)]
    async fn ninety_five_seconds_at_thirty() {
        let dir = tempfile::tempdir().unwrap();
        for _ in 0..20 {
            let recorder = Recorder::default();
            let mut agent = Agent::with_publisher(config(dir.path()), recorder.clone()).unwrap();
            agent.run(tokio::time::sleep(Duration::from_secs(95))).await;
            let n = recorder.sends.lock().unwrap().len();
            assert!(n == 3 || n == 4, "{n} heartbeats");
        }
    }

    #[tokio::test(start_paused = true)]
    async fn no_burst_after_stall() {
        let dir = tempfile::tempdir().unwrap();
        let recorder = Recorder {
            stall_first: Some(Duration::from_secs(100)),
            ..Recorder::default()
        };
        let mut agent = Agent::with_publisher(config(dir.path()), recorder.clone()).unwrap();
        agent.run(tokio::time::sleep(Duration::from_secs(300))).await;
        let sends = recorder.sends.lock().unwrap();
        let times: Vec<_> = sends.iter().map(|(t, _)| *t).collect();
        for pair in times.windows(2) {
            assert!(pair[1] - pair[0] >= Duration::from_secs(27), "{:?}", pair[1] - pair[0]);
        }
        let stamps: Vec<_> = sends.iter().map(|(_, hb)| hb.timestamp).collect();
        assert!(stamps.windows(2).all(|w| w[1] > w[0]));
    }
}
