//! Deterministic synthetic caches and clients.
//!
//! Caches live in 100.64.0.0/10 and clients in 198.18.0.0/15. The matching
//! locator table assigns every /20 of the cache range and every /24 of the
//! client range a fixed pseudo-random coordinate, so a server loaded with
//! [`locator_table`] places any synthetic fleet.

use std::fmt::Write;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shoal_core::{GeoCoord, Heartbeat, IpLocator};

const CACHE_BASE: u32 = 0x6440_0000; // 100.64.0.0
const CACHE_BITS: u32 = 22;
const CACHE_BLOCK_BITS: u32 = 12; // /20 blocks
const CLIENT_BASE: u32 = 0xC612_0000; // 198.18.0.0
const CLIENT_BLOCKS: u32 = 512; // /24 blocks in a /15
const TABLE_SEED: u64 = 0x0053_05A1;

fn random_coord(rng: &mut ChaCha8Rng) -> GeoCoord {
    GeoCoord::new(rng.gen_range(-60.0..70.0), rng.gen_range(-180.0..180.0)).expect("in range")
}

/// Locator table covering every synthetic cache and client address.
pub fn locator_table() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(TABLE_SEED);
    let mut out = String::from("# synthetic shoal bench locator table\n");
    for block in 0..(1u32 << (CACHE_BITS - CACHE_BLOCK_BITS)) {
        let c = random_coord(&mut rng);
        let net = Ipv4Addr::from(CACHE_BASE + (block << CACHE_BLOCK_BITS));
        let _ = writeln!(out, "{net}/{},{:.4},{:.4}", 32 - CACHE_BLOCK_BITS, c.lat(), c.lon());
    }
    for block in 0..CLIENT_BLOCKS {
        let c = random_coord(&mut rng);
        let net = Ipv4Addr::from(CLIENT_BASE + (block << 8));
        let _ = writeln!(out, "{net}/24,{:.4},{:.4}", c.lat(), c.lon());
    }
    out
}

pub fn locator() -> IpLocator {
    IpLocator::parse(&locator_table()).expect("generated table parses")
}

/// Address of synthetic client `i`; clients with different `i` (mod 512)
/// sit in different /24s.
pub fn client_ip(i: usize) -> Ipv4Addr {
    let block = (i as u32) % CLIENT_BLOCKS;
    let host = 1 + ((i as u32) / CLIENT_BLOCKS) % 254;
    Ipv4Addr::from(CLIENT_BASE + (block << 8) + host)
}

/// The first `n` synthetic caches for `seed`. A longer fleet with the same
/// seed extends a shorter one.
pub fn fleet(seed: u64, n: usize) -> Vec<Heartbeat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let offset = rng.gen_range(0..(1u32 << CACHE_BITS));
            let load = (rng.gen_range(0.0..10.0f64) * 4.0).round() / 4.0;
            Heartbeat {
                id: format!("bench-{seed}-{i:06}"),
                hostname: format!("squid-{seed}-{i}.bench.shoal"),
                public_ip: Ipv4Addr::from(CACHE_BASE + offset),
                port: 3128,
                load,
                timestamp: 0.0,
                interval_s: 30,
            }
        })
        .collect()
}
