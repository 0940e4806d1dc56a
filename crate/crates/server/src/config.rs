use std::net::{IpAddr, Ipv4Addr};
use std::path::PathBuf;

use shoal_core::geo::{GeoCoord, DEFAULT_CACHE_TTL_S};
use shoal_core::{ConfigError, Settings, DEFAULT_SWEEP_S, DEFAULT_TTL_S};

/// Default REST listener port.
pub const DEFAULT_PORT: u16 = 8080;
/// Default heartbeat queue capacity.
pub const DEFAULT_QUEUE_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub bind: IpAddr,
    /// `0` picks an ephemeral port.
    pub port: u16,
    pub trust_xff: bool,
    pub ttl_s: f64,
    pub sweep_s: f64,
    pub table_path: Option<PathBuf>,
    pub cache_enabled: bool,
    pub cache_ttl_s: f64,
    pub queue_capacity: usize,
    /// Where the server itself sits, for the status page distance column.
    pub location: Option<GeoCoord>,
    pub access_log: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::UNSPECIFIED),
            port: DEFAULT_PORT,
            trust_xff: false,
            ttl_s: DEFAULT_TTL_S as f64,
            sweep_s: DEFAULT_SWEEP_S as f64,
            table_path: None,
            cache_enabled: true,
            cache_ttl_s: DEFAULT_CACHE_TTL_S,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            location: None,
            access_log: true,
        }
    }
}

impl ServerConfig {
    /// Reads `server.*`, `registry.*`, `geo.*` and `broker.*` keys.
    pub fn from_settings(s: &Settings) -> Result<Self, ConfigError> {
        let d = Self::default();
        let location = match s.get_str("server.location") {
            None => None,
            Some(v) => Some(parse_location(v).ok_or_else(|| ConfigError::Value {
                key: "server.location".into(),
                value: v.into(),
            })?),
        };
        let positive = |key: &str, v: f64| {
            if v > 0.0 {
                Ok(v)
            } else {
                Err(ConfigError::Value {
                    key: key.into(),
                    value: v.to_string(),
                })
            }
        };
        Ok(Self {
            bind: s.get_or("server.bind", d.bind)?,
            port: s.get_or("server.port", d.port)?,
            trust_xff: s.get_bool("server.trust_xff", d.trust_xff)?,
            ttl_s: positive("registry.ttl_s", s.get_or("registry.ttl_s", d.ttl_s)?)?,
            sweep_s: positive("registry.sweep_s", s.get_or("registry.sweep_s", d.sweep_s)?)?,
            table_path: s.get::<PathBuf>("geo.table_path")?,
            cache_enabled: s.get_bool("geo.cache_enabled", d.cache_enabled)?,
            cache_ttl_s: s.get_or("geo.cache_ttl_s", d.cache_ttl_s)?,
            queue_capacity: s.get_or("broker.queue_capacity", d.queue_capacity)?.max(1),
            location,
            access_log: s.get_bool("server.access_log", d.access_log)?,
        })
    }
}

fn parse_location(v: &str) -> Option<GeoCoord> {
    let (lat, lon) = v.split_once(',')?;
    GeoCoord::new(lat.trim().parse().ok()?, lon.trim().parse().ok()?).ok()
}
