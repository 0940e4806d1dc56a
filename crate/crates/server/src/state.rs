use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use shoal_core::geo::{haversine_km, Lookup};
use shoal_core::wire::{NearestEntry, NearestResponse};
use shoal_core::{Broker, Heartbeat, IpLocator, NearestIndex, Registry, Timestamp};
use shoal_core::{DEFAULT_EXCHANGE, DEFAULT_QUEUE, DEFAULT_ROUTING_KEY};
use tracing::debug;

use crate::ServerConfig;

/// Counters exposed at `/api/stats`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub heartbeats_total: u64,
    pub malformed_total: u64,
    pub discarded_total: u64,
    pub nearest_requests_total: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    /// Heartbeats lost to heartbeat-queue overflow.
    pub queue_dropped_total: u64,
    pub tracked: u64,
}

#[derive(Default)]
struct Counters {
    heartbeats: AtomicU64,
    malformed: AtomicU64,
    nearest: AtomicU64,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Everything the request handlers, consumer and sweeper share.
pub struct AppState {
    pub config: ServerConfig,
    pub broker: Arc<Broker>,
    pub registry: Arc<Registry>,
    pub index: NearestIndex,
    started: Instant,
    counters: Counters,
    consumer_paused: AtomicBool,
}

impl AppState {
    pub fn new(config: ServerConfig, locator: IpLocator) -> Arc<Self> {
        let broker = Arc::new(Broker::new());
        broker.declare_exchange(DEFAULT_EXCHANGE).expect("non-empty name");
        broker
            .declare_queue(DEFAULT_QUEUE, config.queue_capacity)
            .expect("positive capacity");
        broker
            .bind(DEFAULT_QUEUE, DEFAULT_EXCHANGE, DEFAULT_ROUTING_KEY)
            .expect("declared above");
        let registry = Arc::new(Registry::new(Arc::new(locator)));
        let index = NearestIndex::new(Arc::clone(&registry))
            .with_cache_enabled(config.cache_enabled)
            .with_cache_ttl(config.cache_ttl_s)
            .with_liveness_ttl(Some(config.ttl_s));
        Arc::new(Self {
            config,
            broker,
            registry,
            index,
            started: Instant::now(),
            counters: Counters::default(),
            consumer_paused: AtomicBool::new(false),
        })
    }

    /// Seconds since the server started.
    pub fn now(&self) -> Timestamp {
        self.started.elapsed().as_secs_f64()
    }

    /// Decodes and applies one heartbeat body. Malformed bodies are counted
    /// and dropped.
    pub fn apply_heartbeat(&self, body: &[u8]) -> bool {
        match Heartbeat::decode(body) {
            Ok(hb) => {
                self.registry.upsert(&hb, self.now());
                self.counters.heartbeats.fetch_add(1, Ordering::Relaxed);
                true
            }
            Err(err) => {
                debug!(%err, "dropping malformed heartbeat");
                self.counters.malformed.fetch_add(1, Ordering::Relaxed);
                false
            }
        }
    }

    /// Drains the heartbeat queue until `stop` is set.
    pub fn consume_loop(&self, stop: &AtomicBool) {
        while !stop.load(Ordering::Relaxed) {
            if self.consumer_paused.load(Ordering::Relaxed) {
                std::thread::sleep(Duration::from_millis(10));
                continue;
            }
            match self.broker.consume(DEFAULT_QUEUE, Duration::from_millis(100)) {
                Ok(Some(msg)) => {
                    self.apply_heartbeat(&msg.payload);
                }
                Ok(None) => {}
                Err(err) => unreachable!("heartbeat queue is declared at startup: {err}"),
            }
        }
    }

    pub fn set_consumer_paused(&self, paused: bool) {
        self.consumer_paused.store(paused, Ordering::Relaxed);
    }

    pub fn sweep(&self) -> usize {
        self.registry.sweep_expired(self.now(), self.config.ttl_s).len()
    }

    /// Ranked lookup for a client, recording request and cache counters.
    /// `None` (e.g. an IPv6 peer) ranks with an unknown client location.
    pub fn lookup(&self, client: Option<Ipv4Addr>, count: usize) -> Lookup {
        let now = self.now();
        let lookup = match client {
            Some(ip) => self.index.nearest_cached(ip, count, now),
            None => self.index.nearest_uncached(None, count, now),
        };
        let counter = if lookup.hit {
            &self.counters.hits
        } else {
            &self.counters.misses
        };
        counter.fetch_add(1, Ordering::Relaxed);
        self.counters.nearest.fetch_add(1, Ordering::Relaxed);
        lookup
    }

    pub fn nearest_response(&self, lookup: &Lookup) -> NearestResponse {
        let now = self.now();
        NearestResponse(
            lookup
                .records
                .iter()
                .map(|r| NearestEntry {
                    hostname: r.hostname.clone(),
                    public_ip: r.public_ip,
                    port: r.port,
                    distance_km: lookup.client.zip(r.geo).map(|(c, g)| haversine_km(c, g)),
                    load: r.load,
                    last_active_s: r.age(now).max(0.0),
                })
                .collect(),
        )
    }

    pub fn stats(&self) -> StatsSnapshot {
        let queue = self.broker.queue_stats(DEFAULT_QUEUE).unwrap_or_default();
        StatsSnapshot {
            heartbeats_total: self.counters.heartbeats.load(Ordering::Relaxed),
            malformed_total: self.counters.malformed.load(Ordering::Relaxed),
            discarded_total: self.broker.discarded(),
            nearest_requests_total: self.counters.nearest.load(Ordering::Relaxed),
            cache_hits: self.counters.hits.load(Ordering::Relaxed),
            cache_misses: self.counters.misses.load(Ordering::Relaxed),
            queue_dropped_total: queue.dropped,
            tracked: self.registry.len() as u64,
        }
    }
}
