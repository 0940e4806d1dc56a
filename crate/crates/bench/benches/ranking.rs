use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use shoal_bench::fleet;
use shoal_core::{rank, NearestIndex, Registry};

fn registry(n: usize) -> Arc<Registry> {
    let registry = Arc::new(Registry::new(Arc::new(fleet::locator())));
    for hb in fleet::fleet(1, n) {
        registry.upsert(&hb, 1.0);
    }
    registry
}

fn ranking(c: &mut Criterion) {
    let mut group = c.benchmark_group("rank");
    for n in [100, 1000, 8000] {
        let reg = registry(n);
        let records = reg.snapshot().records;
        let client = reg.locator().resolve(fleet::client_ip(3));
        group.bench_with_input(BenchmarkId::from_parameter(n), &records, |b, records| {
            b.iter(|| rank(client, records, 5))
        });
    }
    group.finish();
}

fn nearest(c: &mut Criterion) {
    let mut group = c.benchmark_group("nearest");
    for n in [100, 1000, 8000] {
        let index = NearestIndex::new(registry(n));
        let ip = fleet::client_ip(3);
        index.nearest_cached(ip, 5, 2.0);
        group.bench_with_input(BenchmarkId::new("hit", n), &index, |b, index| {
            b.iter(|| index.nearest_cached(ip, 5, 2.0))
        });
        let client = index.registry().locator().resolve(ip);
        group.bench_with_input(BenchmarkId::new("miss", n), &index, |b, index| {
            b.iter(|| index.nearest_uncached(client, 5, 2.0))
        });
    }
    group.finish();
}

criterion_group!(benches, ranking, nearest);
criterion_main!(benches);
