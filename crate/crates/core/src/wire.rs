//! Wire formats shared by the agent, server and client.
//!
//! Heartbeats and nearest-cache responses are JSON documents. A heartbeat is
//! a single object:
//!
//! ```text
//! {"id":"3f2a..","hostname":"squid.example.org","public_ip":"142.104.5.9",
//!  "port":3128,"load":2.5,"timestamp":1700000000.0,"interval_s":30}
//! ```

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest accepted heartbeat body, in bytes.
pub const MAX_HEARTBEAT_BYTES: usize = 4096;

const MAX_ID_LEN: usize = 128;
const MAX_HOSTNAME_LEN: usize = 253;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("heartbeat body is {0} bytes, limit is {MAX_HEARTBEAT_BYTES}")]
    TooLarge(usize),
    #[error("malformed heartbeat: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("invalid heartbeat field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> WireError {
    WireError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// The message an agent publishes every interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub id: String,
    pub hostname: String,
    pub public_ip: Ipv4Addr,
    pub port: u16,
    pub load: f64,
    /// Sender wall clock, seconds since the Unix epoch.
    pub timestamp: f64,
    pub interval_s: u64,
}

impl Heartbeat {
    /// Parses and validates a wire body.
    pub fn decode(body: &[u8]) -> Result<Self, WireError> {
        if body.len() > MAX_HEARTBEAT_BYTES {
            return Err(WireError::TooLarge(body.len()));
        }
        let hb: Heartbeat = serde_json::from_slice(body)?;
        hb.validate()?;
        Ok(hb)
    }

    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("heartbeat serialization is infallible")
    }

    pub fn validate(&self) -> Result<(), WireError> {
        if self.id.is_empty() || self.id.len() > MAX_ID_LEN {
            return Err(invalid("id", "must be 1..=128 bytes"));
        }
        if self.id.chars().any(|c| c.is_control() || c.is_whitespace()) {
            return Err(invalid("id", "must not contain whitespace or control characters"));
        }
        if !is_valid_hostname(&self.hostname) {
            return Err(invalid("hostname", format!("`{}` is not a DNS name", self.hostname)));
        }
        if self.port == 0 {
            return Err(invalid("port", "must be in 1..=65535"));
        }
        if !self.load.is_finite() || self.load < 0.0 {
            return Err(invalid("load", "must be a finite non-negative number"));
        }
        if !self.timestamp.is_finite() || self.timestamp < 0.0 {
            return Err(invalid("timestamp", "must be a finite non-negative number"));
        }
        if self.interval_s == 0 {
            return Err(invalid("interval_s", "must be at least 1"));
        }
        Ok(())
    }
}

/// DNS-style names: letters, digits, `-`, `_` and `.`, at most 253 bytes.
pub fn is_valid_hostname(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= MAX_HOSTNAME_LEN
        && !name.starts_with('.')
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

/// One ranked cache in a `/nearest` response. Field order is part of the
/// wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestEntry {
    pub hostname: String,
    pub public_ip: Ipv4Addr,
    pub port: u16,
    /// `null` when either the client or the cache location is unknown.
    pub distance_km: Option<f64>,
    pub load: f64,
    /// Seconds since the cache's last heartbeat.
    pub last_active_s: f64,
}

/// Body of `GET /nearest`: a JSON array in ranked order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NearestResponse(pub Vec<NearestEntry>);

impl NearestResponse {
    pub fn entries(&self) -> &[NearestEntry] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Heartbeat {
        Heartbeat {
            id: "a1".into(),
            hostname: "squid.example.org".into(),
            public_ip: Ipv4Addr::new(142, 104, 5, 9),
            port: 3128,
            load: 2.5,
            timestamp: 1_700_000_000.0,
            interval_s: 30,
        }
    }

    #[test]
    fn decode_accepts_encoded() {
        let hb = sample();
        assert_eq!(Heartbeat::decode(&hb.encode()).unwrap(), hb);
    }

    #[test]
    fn negative_port_is_malformed() {
        let body =
            br#"{"id":"a","hostname":"h","public_ip":"1.2.3.4","port":-1,"load":1,"timestamp":1,"interval_s":30}"#;
        assert!(matches!(Heartbeat::decode(body), Err(WireError::Syntax(_))));
    }

    #[test]
    fn missing_field_is_malformed() {
        let body = br#"{"id":"a","hostname":"h","public_ip":"1.2.3.4","port":3128,"load":1,"timestamp":1}"#;
        assert!(Heartbeat::decode(body).is_err());
    }

    #[test]
    fn field_bounds() {
        let mut hb = sample();
        hb.port = 0;
        assert!(hb.validate().is_err());
        let mut hb = sample();
        hb.load = -0.5;
        assert!(hb.validate().is_err());
        let mut hb = sample();
        hb.load = f64::NAN;
        assert!(hb.validate().is_err());
        let mut hb = sample();
        hb.hostname = "bad host\"".into();
        assert!(hb.validate().is_err());
        let mut hb = sample();
        hb.id = String::new();
        assert!(hb.validate().is_err());
        let mut hb = sample();
        hb.interval_s = 0;
        assert!(hb.validate().is_err());
    }

    #[test]
    fn oversized_body_rejected() {
        let mut hb = sample();
        hb.hostname = "a".repeat(MAX_HOSTNAME_LEN);
        hb.id = "x".repeat(MAX_ID_LEN);
        let ok = hb.encode();
        assert!(ok.len() < MAX_HEARTBEAT_BYTES);
        let mut big = ok.clone();
        big.pop();
        big.extend(std::iter::repeat_n(b' ', MAX_HEARTBEAT_BYTES));
        big.push(b'}');
        assert!(matches!(Heartbeat::decode(&big), Err(WireError::TooLarge(_))));
    }

    #[test]
    fn nearest_entry_key_order() {
        let resp = NearestResponse(vec![NearestEntry {
            hostname: "h1".into(),
            public_ip: Ipv4Addr::new(10, 0, 0, 1),
            port: 3128,
            distance_km: None,
            load: 1.0,
            last_active_s: 2.0,
        }]);
        assert_eq!(
            serde_json::to_string(&resp).unwrap(),
            r#"[{"hostname":"h1","public_ip":"10.0.0.1","port":3128,"distance_km":null,"load":1.0,"last_active_s":2.0}]"#
        );
    }
}
