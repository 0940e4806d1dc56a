use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::sync::Arc;

use parking_lot::RwLock;

use super::{rank_counted, GeoCoord};
use crate::registry::{CacheRecord, Registry};
use crate::Timestamp;

/// Default lifetime of a subnet cache entry, in seconds.
pub const DEFAULT_CACHE_TTL_S: f64 = 60.0;

/// Entries hold at least this many ids so requests for different counts
/// from one subnet share an entry.
const MIN_DEPTH: usize = 100;

/// Bound on distinct subnets held at once.
const MAX_ENTRIES: usize = 1 << 16;

/// A client address masked to its /24.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubnetKey(Ipv4Addr);

impl SubnetKey {
    pub fn of(ip: Ipv4Addr) -> Self {
        Self(Ipv4Addr::from(u32::from(ip) & 0xFFFF_FF00))
    }

    pub fn network(&self) -> Ipv4Addr {
        self.0
    }
}

impl fmt::Display for SubnetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/24", self.0)
    }
}

/// Memoized ranking for one client subnet.
#[derive(Debug, Clone)]
pub struct SubnetCacheEntry {
    pub subnet_key: SubnetKey,
    /// Client location the ranking was computed for.
    pub client: Option<GeoCoord>,
    pub ranked_ids: Vec<String>,
    /// Number of ids requested when the entry was built. A shorter
    /// `ranked_ids` means the ranking covers every live record.
    pub depth: usize,
    /// Registry epoch the ranking was computed against.
    pub epoch: u64,
    pub created_at: Timestamp,
}

impl SubnetCacheEntry {
    fn covers(&self, k: usize) -> bool {
        k <= self.depth || self.ranked_ids.len() < self.depth
    }
}

/// Result of one nearest-cache lookup.
#[derive(Debug, Clone)]
pub struct Lookup {
    pub records: Vec<Arc<CacheRecord>>,
    pub client: Option<GeoCoord>,
    pub epoch: u64,
    pub hit: bool,
    /// Comparisons on a miss, id lookups on a hit.
    pub work_ops: u64,
}

/// Nearest-cache query front end over a [`Registry`], with a per-/24
/// memo of rankings invalidated by registry epoch and age.
pub struct NearestIndex {
    registry: Arc<Registry>,
    cache: RwLock<HashMap<SubnetKey, Arc<SubnetCacheEntry>>>,
    cache_ttl: f64,
    enabled: bool,
    liveness_ttl: Option<f64>,
}

impl NearestIndex {
    pub fn new(registry: Arc<Registry>) -> Self {
        Self {
            registry,
            cache: RwLock::new(HashMap::new()),
            cache_ttl: DEFAULT_CACHE_TTL_S,
            enabled: true,
            liveness_ttl: None,
        }
    }

    pub fn with_cache_ttl(mut self, ttl: f64) -> Self {
        self.cache_ttl = ttl;
        self
    }

    pub fn with_cache_enabled(mut self, enabled: bool) -> Self {
        self.enabled = enabled;
        self
    }

    /// Exclude records silent for more than `ttl` seconds from results,
    /// regardless of when the registry was last swept.
    pub fn with_liveness_ttl(mut self, ttl: Option<f64>) -> Self {
        self.liveness_ttl = ttl;
        self
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn cache_enabled(&self) -> bool {
        self.enabled
    }

    pub fn cached_subnets(&self) -> usize {
        self.cache.read().len()
    }

    pub fn entry(&self, ip: Ipv4Addr) -> Option<Arc<SubnetCacheEntry>> {
        self.cache.read().get(&SubnetKey::of(ip)).cloned()
    }

    /// Top `k` caches for `client_ip`, served from the subnet memo when the
    /// registry has not changed since the entry was built.
    pub fn nearest_cached(&self, client_ip: Ipv4Addr, k: usize, now: Timestamp) -> Lookup {
        let client = self.registry.locator().resolve(client_ip);
        let key = SubnetKey::of(client_ip);
        let mut ops = 0;
        if self.enabled {
            if let Some(hit) = self.try_hit(key, client, k, now, &mut ops) {
                return hit;
            }
        }
        let depth = k.max(MIN_DEPTH);
        let mut lookup = self.rank_live(client, depth, now);
        lookup.work_ops += ops;
        if self.enabled {
            self.store(SubnetCacheEntry {
                subnet_key: key,
                client,
                ranked_ids: lookup.records.iter().map(|r| r.id.clone()).collect(),
                depth,
                epoch: lookup.epoch,
                created_at: now,
            });
        }
        lookup.records.truncate(k);
        lookup
    }

    /// Uncached ranking for a client location (or none). Never touches the memo.
    pub fn nearest_uncached(&self, client: Option<GeoCoord>, k: usize, now: Timestamp) -> Lookup {
        self.rank_live(client, k, now)
    }

    fn try_hit(
        &self,
        key: SubnetKey,
        client: Option<GeoCoord>,
        k: usize,
        now: Timestamp,
        ops: &mut u64,
    ) -> Option<Lookup> {
        let entry = self.cache.read().get(&key).cloned()?;
        if entry.client != client || now - entry.created_at > self.cache_ttl || !entry.covers(k) {
            return None;
        }
        let records = self.registry.read(|epoch, map| {
            if epoch != entry.epoch {
                return None;
            }
            let mut out = Vec::with_capacity(k.min(entry.ranked_ids.len()));
            for id in entry.ranked_ids.iter().take(k) {
                *ops += 1;
                let record = map.get(id)?;
                if self.liveness_ttl.is_some_and(|ttl| !record.is_live(now, ttl)) {
                    return None;
                }
                out.push(Arc::clone(record));
            }
            Some(out)
        })?;
        Some(Lookup {
            records,
            client,
            epoch: entry.epoch,
            hit: true,
            work_ops: *ops,
        })
    }

    fn rank_live(&self, client: Option<GeoCoord>, k: usize, now: Timestamp) -> Lookup {
        let (epoch, live) = self.registry.read(|epoch, map| {
            let live: Vec<Arc<CacheRecord>> = match self.liveness_ttl {
                Some(ttl) => map.values().filter(|r| r.is_live(now, ttl)).cloned().collect(),
                None => map.values().cloned().collect(),
            };
            (epoch, live)
        });
        let mut ops = 0;
        let records = rank_counted(client, &live, k, &mut ops);
        Lookup {
            records,
            client,
            epoch,
            hit: false,
            work_ops: ops,
        }
    }

    fn store(&self, entry: SubnetCacheEntry) {
        let mut cache = self.cache.write();
        if cache.len() >= MAX_ENTRIES && !cache.contains_key(&entry.subnet_key) {
            let (epoch, created_at, ttl) = (entry.epoch, entry.created_at, self.cache_ttl);
            cache.retain(|_, e| e.epoch == epoch && created_at - e.created_at <= ttl);
            if cache.len() >= MAX_ENTRIES {
                cache.clear();
            }
        }
        cache.insert(entry.subnet_key, Arc::new(entry));
    }
}
