use std::borrow::Borrow;
use std::cmp::Ordering;

use super::{haversine_km, GeoCoord};
use crate::registry::CacheRecord;

/// Width of the distance buckets that load balancing happens within.
pub const DISTANCE_BUCKET_KM: f64 = 10.0;

/// Distance rounded to the nearest multiple of [`DISTANCE_BUCKET_KM`],
/// expressed in bucket units.
pub fn distance_bucket(km: f64) -> u64 {
    (km / DISTANCE_BUCKET_KM).round() as u64
}

/// Sort key of one record relative to a client. Together with the record id
/// it totally orders any set of records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankKey {
    /// Records with no known location sort after every located record.
    pub unlocated: bool,
    /// Zero for every record when the client location is unknown.
    pub bucket: u64,
    pub load: f64,
}

impl RankKey {
    pub fn new(client: Option<GeoCoord>, record: &CacheRecord) -> Self {
        let bucket = match (client, record.geo) {
            (Some(c), Some(g)) => distance_bucket(haversine_km(c, g)),
            _ => 0,
        };
        Self {
            unlocated: record.geo.is_none(),
            bucket,
            load: record.load,
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        self.unlocated
            .cmp(&other.unlocated)
            .then(self.bucket.cmp(&other.bucket))
            .then(self.load.total_cmp(&other.load))
    }
}

/// Returns the best `k` records for `client`, ordered by
/// `(unlocated, distance bucket, load, id)`.
pub fn rank<R>(client: Option<GeoCoord>, records: &[R], k: usize) -> Vec<R>
where
    R: Borrow<CacheRecord> + Clone,
{
    let mut ops = 0;
    rank_counted(client, records, k, &mut ops)
}

/// [`rank`], adding the number of key comparisons performed to `comparisons`.
pub fn rank_counted<R>(client: Option<GeoCoord>, records: &[R], k: usize, comparisons: &mut u64) -> Vec<R>
where
    R: Borrow<CacheRecord> + Clone,
{
    if k == 0 || records.is_empty() {
        return Vec::new();
    }
    let mut keyed: Vec<(RankKey, usize)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (RankKey::new(client, r.borrow()), i))
        .collect();
    let mut count = 0u64;
    keyed.sort_unstable_by(|(ka, ia), (kb, ib)| {
        count += 1;
        ka.cmp(kb)
            .then_with(|| records[*ia].borrow().id.cmp(&records[*ib].borrow().id))
    });
    *comparisons += count;
    keyed.into_iter().take(k).map(|(_, i)| records[i].clone()).collect()
}
