//! IP geolocation, great-circle distance, and nearest-cache ranking.

mod cache;
mod coord;
mod locator;
mod rank;

pub use cache::{Lookup, NearestIndex, SubnetCacheEntry, SubnetKey, DEFAULT_CACHE_TTL_S};
pub use coord::{haversine_km, GeoCoord, GeoError, EARTH_RADIUS_KM};
pub use locator::{IpLocator, LocatorError};
pub use rank::{distance_bucket, rank, rank_counted, RankKey, DISTANCE_BUCKET_KM};
