//! In-process exchange/queue message routing.
//!
//! Messages are published to a named exchange with a routing key and copied
//! into every queue bound to that exchange under the same key. A message
//! that matches no binding is discarded for good. Queues are bounded FIFOs
//! that drop their oldest message on overflow.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use parking_lot::{Condvar, Mutex, RwLock};
use thiserror::Error;
use tracing::warn;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BrokerError {
    #[error("exchange name must not be empty")]
    EmptyExchangeName,
    #[error("queue name must not be empty")]
    EmptyQueueName,
    #[error("queue capacity must be positive")]
    ZeroCapacity,
    #[error("routing key must not be empty")]
    EmptyRoutingKey,
    #[error("payload must not be empty")]
    EmptyPayload,
    #[error("unknown exchange `{0}`")]
    UnknownExchange(String),
    #[error("unknown queue `{0}`")]
    UnknownQueue(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrokerMessage {
    pub routing_key: Arc<str>,
    pub payload: Bytes,
    pub enqueued_at: Instant,
}

/// Delivers messages published to `exchange` with a routing key equal to
/// `routing_key_pattern` into `queue`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub exchange: String,
    pub queue: String,
    pub routing_key_pattern: String,
}

/// Outcome of [`Broker::declare_queue`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueDeclared {
    Created,
    Existing,
    /// The queue already existed with another capacity, which was kept.
    CapacityMismatch {
        existing: usize,
        requested: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueStats {
    pub len: usize,
    pub capacity: usize,
    pub enqueued: u64,
    pub dropped: u64,
}

struct Queue {
    capacity: usize,
    items: Mutex<VecDeque<BrokerMessage>>,
    ready: Condvar,
    enqueued: AtomicU64,
    dropped: AtomicU64,
}

impl Queue {
    fn push(&self, msg: BrokerMessage) {
        let mut items = self.items.lock();
        if items.len() >= self.capacity {
            items.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        items.push_back(msg);
        self.enqueued.fetch_add(1, Ordering::Relaxed);
        drop(items);
        self.ready.notify_one();
    }
}

#[derive(Default)]
struct Topology {
    /// Exchange name → bindings on it.
    exchanges: HashMap<String, Vec<(String, Arc<Queue>)>>,
    queues: HashMap<String, Arc<Queue>>,
}

/// Shared broker. All operations are safe from any number of threads.
#[derive(Default)]
pub struct Broker {
    topology: RwLock<Topology>,
    discarded: AtomicU64,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare_exchange(&self, name: &str) -> Result<(), BrokerError> {
        if name.is_empty() {
            return Err(BrokerError::EmptyExchangeName);
        }
        self.topology.write().exchanges.entry(name.to_owned()).or_default();
        Ok(())
    }

    pub fn declare_queue(&self, name: &str, capacity: usize) -> Result<QueueDeclared, BrokerError> {
        if name.is_empty() {
            return Err(BrokerError::EmptyQueueName);
        }
        if capacity == 0 {
            return Err(BrokerError::ZeroCapacity);
        }
        let mut topo = self.topology.write();
        if let Some(existing) = topo.queues.get(name) {
            if existing.capacity != capacity {
                warn!(
                    queue = name,
                    existing = existing.capacity,
                    requested = capacity,
                    "queue redeclared with a different capacity; keeping the original"
                );
                return Ok(QueueDeclared::CapacityMismatch {
                    existing: existing.capacity,
                    requested: capacity,
                });
            }
            return Ok(QueueDeclared::Existing);
        }
        topo.queues.insert(
            name.to_owned(),
            Arc::new(Queue {
                capacity,
                items: Mutex::new(VecDeque::new()),
                ready: Condvar::new(),
                enqueued: AtomicU64::new(0),
                dropped: AtomicU64::new(0),
            }),
        );
        Ok(QueueDeclared::Created)
    }

    pub fn bind(&self, queue: &str, exchange: &str, routing_key: &str) -> Result<(), BrokerError> {
        if routing_key.is_empty() {
            return Err(BrokerError::EmptyRoutingKey);
        }
        let mut topo = self.topology.write();
        let q = topo
            .queues
            .get(queue)
            .cloned()
            .ok_or_else(|| BrokerError::UnknownQueue(queue.to_owned()))?;
        let bindings = topo
            .exchanges
            .get_mut(exchange)
            .ok_or_else(|| BrokerError::UnknownExchange(exchange.to_owned()))?;
        if !bindings.iter().any(|(key, b)| key == routing_key && Arc::ptr_eq(b, &q)) {
            bindings.push((routing_key.to_owned(), q));
        }
        Ok(())
    }

    pub fn bindings(&self) -> Vec<Binding> {
        let topo = self.topology.read();
        let mut out = Vec::new();
        for (exchange, bindings) in &topo.exchanges {
            for (key, q) in bindings {
                if let Some((name, _)) = topo.queues.iter().find(|(_, other)| Arc::ptr_eq(other, q)) {
                    out.push(Binding {
                        exchange: exchange.clone(),
                        queue: name.clone(),
                        routing_key_pattern: key.clone(),
                    });
                }
            }
        }
        out
    }

    /// Copies `payload` into every queue bound under `routing_key` and
    /// returns the number of deliveries. Zero deliveries counts a discard.
    pub fn publish(&self, exchange: &str, routing_key: &str, payload: impl Into<Bytes>) -> Result<usize, BrokerError> {
        let payload = payload.into();
        if routing_key.is_empty() {
            return Err(BrokerError::EmptyRoutingKey);
        }
        if payload.is_empty() {
            return Err(BrokerError::EmptyPayload);
        }
        let topo = self.topology.read();
        let bindings = topo
            .exchanges
            .get(exchange)
            .ok_or_else(|| BrokerError::UnknownExchange(exchange.to_owned()))?;
        let key: Arc<str> = Arc::from(routing_key);
        let enqueued_at = Instant::now();
        let mut delivered = 0;
        for (_, q) in bindings.iter().filter(|(k, _)| k == routing_key) {
            q.push(BrokerMessage {
                routing_key: Arc::clone(&key),
                payload: payload.clone(),
                enqueued_at,
            });
            delivered += 1;
        }
        if delivered == 0 {
            self.discarded.fetch_add(1, Ordering::Relaxed);
        }
        Ok(delivered)
    }

    /// Takes the oldest message from `queue`, waiting up to `max_wait` for
    /// one to arrive.
    pub fn consume(&self, queue: &str, max_wait: Duration) -> Result<Option<BrokerMessage>, BrokerError> {
        let q = self.queue(queue)?;
        let deadline = Instant::now() + max_wait;
        let mut items = q.items.lock();
        loop {
            if let Some(msg) = items.pop_front() {
                return Ok(Some(msg));
            }
            if q.ready.wait_until(&mut items, deadline).timed_out() {
                return Ok(items.pop_front());
            }
        }
    }

    pub fn discarded(&self) -> u64 {
        self.discarded.load(Ordering::Relaxed)
    }

    pub fn queue_stats(&self, queue: &str) -> Result<QueueStats, BrokerError> {
        let q = self.queue(queue)?;
        let len = q.items.lock().len();
        Ok(QueueStats {
            len,
            capacity: q.capacity,
            enqueued: q.enqueued.load(Ordering::Relaxed),
            dropped: q.dropped.load(Ordering::Relaxed),
        })
    }

    fn queue(&self, name: &str) -> Result<Arc<Queue>, BrokerError> {
        self.topology
            .read()
            .queues
            .get(name)
            .cloned()
            .ok_or_else(|| BrokerError::UnknownQueue(name.to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wired() -> Broker {
        let b = Broker::new();
        b.declare_exchange("shoal").unwrap();
        b.declare_queue("q", 10_000).unwrap();
        b.bind("q", "shoal", "squiddata").unwrap();
        b
    }

    #[test]
    fn exchange_declare_is_idempotent() {
        let b = Broker::new();
        b.declare_exchange("shoal").unwrap();
        b.declare_exchange("shoal").unwrap();
        assert_eq!(b.topology.read().exchanges.len(), 1);
        assert_eq!(b.declare_exchange(""), Err(BrokerError::EmptyExchangeName));
    }

    #[test]
    fn publish_with_no_queue_discards() {
        let b = Broker::new();
        b.declare_exchange("shoal").unwrap();
        assert_eq!(b.publish("shoal", "squiddata", "m").unwrap(), 0);
        assert_eq!(b.discarded(), 1);
    }

    #[test]
    fn queue_redeclare_keeps_capacity() {
        let b = Broker::new();
        assert_eq!(b.declare_queue("q", 10_000), Ok(QueueDeclared::Created));
        assert_eq!(b.declare_queue("q", 10_000), Ok(QueueDeclared::Existing));
        assert_eq!(
            b.declare_queue("q", 5),
            Ok(QueueDeclared::CapacityMismatch {
                existing: 10_000,
                requested: 5
            })
        );
        assert_eq!(b.queue_stats("q").unwrap().capacity, 10_000);
        assert_eq!(b.declare_queue("q2", 0), Err(BrokerError::ZeroCapacity));
    }

    #[test]
    fn overflow_drops_oldest() {
        let b = Broker::new();
        b.declare_exchange("ex").unwrap();
        b.declare_queue("q", 100).unwrap();
        b.bind("q", "ex", "k").unwrap();
        for i in 0..137u32 {
            b.publish("ex", "k", i.to_string()).unwrap();
        }
        let stats = b.queue_stats("q").unwrap();
        assert_eq!(stats.dropped, 37);
        assert_eq!(stats.len, 100);
        let first = b.consume("q", Duration::ZERO).unwrap().unwrap();
        assert_eq!(&first.payload[..], b"37");
    }

    #[test]
    fn routing_is_exact_match() {
        let b = wired();
        b.publish("shoal", "squiddata", "m").unwrap();
        assert_eq!(b.publish("shoal", "other", "m").unwrap(), 0);
        assert_eq!(b.publish("shoal", "squid*", "m").unwrap(), 0);
        assert_eq!(b.queue_stats("q").unwrap().len, 1);
        assert_eq!(b.discarded(), 2);
    }

    #[test]
    fn bind_errors() {
        let b = Broker::new();
        b.declare_queue("q", 1).unwrap();
        assert_eq!(
            b.bind("q", "nope", "k"),
            Err(BrokerError::UnknownExchange("nope".into()))
        );
        b.declare_exchange("ex").unwrap();
        assert_eq!(
            b.bind("missing", "ex", "k"),
            Err(BrokerError::UnknownQueue("missing".into()))
        );
        b.bind("q", "ex", "k").unwrap();
        b.bind("q", "ex", "k").unwrap();
        assert_eq!(b.bindings().len(), 1);
    }

    #[test]
    fn publish_and_consume_errors() {
        let b = wired();
        assert_eq!(
            b.publish("nope", "k", "m"),
            Err(BrokerError::UnknownExchange("nope".into()))
        );
        assert_eq!(b.publish("shoal", "squiddata", ""), Err(BrokerError::EmptyPayload));
        assert_eq!(b.publish("shoal", "", "m"), Err(BrokerError::EmptyRoutingKey));
        assert_eq!(
            b.consume("nope", Duration::ZERO),
            Err(BrokerError::UnknownQueue("nope".into()))
        );
    }

    #[test]
    fn two_queues_same_key() {
        let b = wired();
        b.declare_queue("q2", 10).unwrap();
        b.bind("q2", "shoal", "squiddata").unwrap();
        assert_eq!(b.publish("shoal", "squiddata", "m").unwrap(), 2);
    }

    #[test]
    fn fifo_order() {
        let b = wired();
        b.publish("shoal", "squiddata", "m1").unwrap();
        b.publish("shoal", "squiddata", "m2").unwrap();
        assert_eq!(&b.consume("q", Duration::ZERO).unwrap().unwrap().payload[..], b"m1");
        assert_eq!(&b.consume("q", Duration::ZERO).unwrap().unwrap().payload[..], b"m2");
    }

    #[test]
    fn consume_times_out_when_idle() {
        let b = wired();
        let start = Instant::now();
        assert!(b.consume("q", Duration::from_millis(50)).unwrap().is_none());
        let waited = start.elapsed();
        assert!(
            waited >= Duration::from_millis(50) && waited < Duration::from_millis(500),
            "{waited:?}"
        );
    }

    #[test]
    fn consume_wakes_on_publish() {
        let b = Arc::new(wired());
        let publisher = Arc::clone(&b);
        let handle = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            publisher.publish("shoal", "squiddata", "late").unwrap();
        });
        let msg = b.consume("q", Duration::from_secs(5)).unwrap();
        assert_eq!(&msg.unwrap().payload[..], b"late");
        handle.join().unwrap();
    }

    #[test]
    fn ten_thousand_in_order() {
        let b = wired();
        for i in 0..10_000u32 {
            b.publish("shoal", "squiddata", i.to_be_bytes().to_vec()).unwrap();
        }
        for i in 0..10_000u32 {
            let msg = b.consume("q", Duration::ZERO).unwrap().unwrap();
            assert_eq!(&msg.payload[..], &i.to_be_bytes());
        }
        assert!(b.consume("q", Duration::ZERO).unwrap().is_none());
    }

    #[test]
    fn competing_consumers_each_message_once() {
        let b = Arc::new(wired());
        let total = 5_000u32;
        let seen = std::thread::scope(|s| {
            let consumers: Vec<_> = (0..4)
                .map(|_| {
                    let b = Arc::clone(&b);
                    s.spawn(move || {
                        let mut got = Vec::new();
                        while let Some(m) = b.consume("q", Duration::from_millis(200)).unwrap() {
                            got.push(u32::from_be_bytes(m.payload[..].try_into().unwrap()));
                        }
                        got
                    })
                })
                .collect();
            for i in 0..total {
                b.publish("shoal", "squiddata", i.to_be_bytes().to_vec()).unwrap();
            }
            consumers
                .into_iter()
                .flat_map(|h| h.join().unwrap())
                .collect::<Vec<_>>()
        });
        let mut sorted = seen.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..total).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn delivery_count_matches_bindings(
            bindings in proptest::collection::vec((0..4usize, 0..3usize), 0..12),
            key in 0..3usize,
        ) {
            let b = Broker::new();
            b.declare_exchange("ex").unwrap();
            for q in 0..4 {
                b.declare_queue(&format!("q{q}"), 16).unwrap();
            }
            for (q, k) in &bindings {
                b.bind(&format!("q{q}"), "ex", &format!("k{k}")).unwrap();
            }
            let mut distinct: Vec<_> = bindings.iter().filter(|(_, k)| *k == key).map(|(q, _)| *q).collect();
            distinct.sort_unstable();
            distinct.dedup();
            let delivered = b.publish("ex", &format!("k{key}"), "m").unwrap();
            prop_assert_eq!(delivered, distinct.len());
            prop_assert_eq!(b.discarded(), u64::from(distinct.is_empty()));
        }

        #[test]
        fn queue_never_exceeds_capacity(cap in 1..64usize, extra in 0..64usize) {
            let b = Broker::new();
            b.declare_exchange("ex").unwrap();
            b.declare_queue("q", cap).unwrap();
            b.bind("q", "ex", "k").unwrap();
            for i in 0..cap + extra {
                b.publish("ex", "k", i.to_string()).unwrap();
                prop_assert!(b.queue_stats("q").unwrap().len <= cap);
            }
            prop_assert_eq!(b.queue_stats("q").unwrap().dropped, extra as u64);
        }
    }
}
