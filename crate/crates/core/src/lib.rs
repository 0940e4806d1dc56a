//! Core data model and algorithms for the shoal cache discovery suite.
//!
//! Cache hosts publish [`wire::Heartbeat`]s into the in-process [`broker`],
//! the server drains them into the volatile [`registry`], and client queries
//! are answered by [`geo::NearestIndex`], which ranks caches by great-circle
//! distance and load and memoizes results per client /24 subnet.

pub mod broker;
pub mod config;
pub mod geo;
pub mod pac;
pub mod registry;
pub mod wire;

pub use broker::{Binding, Broker, BrokerError, BrokerMessage};
pub use config::{ConfigError, Settings};
pub use geo::{haversine_km, rank, GeoCoord, IpLocator, Lookup, NearestIndex, SubnetCacheEntry};
pub use registry::{CacheRecord, Registry, Snapshot};
pub use wire::{Heartbeat, NearestEntry, NearestResponse, WireError};

/// Monotonic time in seconds, as used by the registry and subnet cache.
pub type Timestamp = f64;

/// Exchange the agents publish to.
pub const DEFAULT_EXCHANGE: &str = "shoal";
/// Queue the server declares and consumes heartbeats from.
pub const DEFAULT_QUEUE: &str = "shoal.heartbeats";
/// Routing key agents publish heartbeats with.
pub const DEFAULT_ROUTING_KEY: &str = "squiddata";
/// Default heartbeat interval in seconds.
pub const DEFAULT_INTERVAL_S: u64 = 30;
/// Default registry TTL: three missed intervals.
pub const DEFAULT_TTL_S: u64 = 3 * DEFAULT_INTERVAL_S;
/// Default sweep cadence in seconds.
pub const DEFAULT_SWEEP_S: u64 = 15;
