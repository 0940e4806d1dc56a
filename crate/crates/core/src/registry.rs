//! Volatile store of active cache servers.
//!
//! Records are immutable once published: an update swaps in a new
//! `Arc<CacheRecord>`, so readers holding a snapshot never observe a
//! partially written record.

use std::collections::HashMap;
use std::net::Ipv4Addr;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::geo::{GeoCoord, IpLocator};
use crate::wire::Heartbeat;
use crate::Timestamp;

/// One tracked cache server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub id: String,
    pub hostname: String,
    pub public_ip: Ipv4Addr,
    pub port: u16,
    /// `None` when the address could not be located.
    pub geo: Option<GeoCoord>,
    pub load: f64,
    pub last_heartbeat: Timestamp,
    pub first_seen: Timestamp,
}

impl CacheRecord {
    /// Seconds since the last heartbeat.
    pub fn age(&self, now: Timestamp) -> f64 {
        now - self.last_heartbeat
    }

    pub fn is_live(&self, now: Timestamp, ttl: f64) -> bool {
        self.age(now) <= ttl
    }

    /// Checks the record invariants.
    pub fn is_consistent(&self) -> bool {
        self.last_heartbeat >= self.first_seen && self.port >= 1 && self.load >= 0.0 && !self.id.is_empty()
    }
}

/// A point-in-time copy of the registry.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub epoch: u64,
    /// Sorted by id.
    pub records: Vec<Arc<CacheRecord>>,
}

#[derive(Default)]
struct Inner {
    records: HashMap<String, Arc<CacheRecord>>,
    epoch: u64,
}

/// Shared registry. Writers serialize on an internal lock; readers get
/// consistent snapshots.
pub struct Registry {
    inner: RwLock<Inner>,
    locator: Arc<IpLocator>,
}

impl Registry {
    pub fn new(locator: Arc<IpLocator>) -> Self {
        Self {
            inner: RwLock::new(Inner::default()),
            locator,
        }
    }

    pub fn locator(&self) -> &IpLocator {
        &self.locator
    }

    /// Applies a validated heartbeat received at `now`.
    ///
    /// The epoch increments whenever the stored record changes. Replaying an
    /// identical `(hb, now)` leaves both record and epoch untouched.
    pub fn upsert(&self, hb: &Heartbeat, now: Timestamp) -> Arc<CacheRecord> {
        // Resolve before taking the write lock; it is only needed for new
        // records or address changes but is cheap either way.
        let geo = self.locator.resolve(hb.public_ip);
        let mut inner = self.inner.write();
        let updated = match inner.records.get(&hb.id) {
            Some(existing) => {
                let geo = if existing.public_ip == hb.public_ip {
                    existing.geo
                } else {
                    geo
                };
                CacheRecord {
                    id: hb.id.clone(),
                    hostname: hb.hostname.clone(),
                    public_ip: hb.public_ip,
                    port: hb.port,
                    geo,
                    load: hb.load,
                    last_heartbeat: now.max(existing.first_seen),
                    first_seen: existing.first_seen,
                }
            }
            None => CacheRecord {
                id: hb.id.clone(),
                hostname: hb.hostname.clone(),
                public_ip: hb.public_ip,
                port: hb.port,
                geo,
                load: hb.load,
                last_heartbeat: now,
                first_seen: now,
            },
        };
        if let Some(existing) = inner.records.get(&hb.id) {
            if **existing == updated {
                return Arc::clone(existing);
            }
        }
        let record = Arc::new(updated);
        inner.records.insert(hb.id.clone(), Arc::clone(&record));
        inner.epoch += 1;
        record
    }

    /// Removes and returns every record silent for more than `ttl` seconds.
    pub fn sweep_expired(&self, now: Timestamp, ttl: f64) -> Vec<Arc<CacheRecord>> {
        assert!(ttl > 0.0, "ttl must be positive");
        // Cheap read-side check keeps the common no-op sweep off the write lock.
        if !self.inner.read().records.values().any(|r| !r.is_live(now, ttl)) {
            return Vec::new();
        }
        let mut inner = self.inner.write();
        let expired: Vec<String> = inner
            .records
            .values()
            .filter(|r| !r.is_live(now, ttl))
            .map(|r| r.id.clone())
            .collect();
        let removed: Vec<_> = expired.iter().filter_map(|id| inner.records.remove(id)).collect();
        if !removed.is_empty() {
            inner.epoch += 1;
        }
        removed
    }

    pub fn snapshot(&self) -> Snapshot {
        let (epoch, mut records) = self.read(|epoch, records| (epoch, records.values().cloned().collect::<Vec<_>>()));
        records.sort_unstable_by(|a, b| a.id.cmp(&b.id));
        Snapshot { epoch, records }
    }

    pub fn epoch(&self) -> u64 {
        self.inner.read().epoch
    }

    pub fn len(&self) -> usize {
        self.inner.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &str) -> Option<Arc<CacheRecord>> {
        self.inner.read().records.get(id).cloned()
    }

    /// Runs `f` against the live map under the read lock.
    pub(crate) fn read<T>(&self, f: impl FnOnce(u64, &HashMap<String, Arc<CacheRecord>>) -> T) -> T {
        let inner = self.inner.read();
        f(inner.epoch, &inner.records)
    }
}
