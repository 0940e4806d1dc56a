use std::collections::HashMap;
use std::net::Ipv4Addr;
use std::path::Path;

use thiserror::Error;

use super::GeoCoord;

#[derive(Debug, Error)]
pub enum LocatorError {
    #[error("reading locator table: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Longest-prefix IPv4 → coordinate table.
///
/// The on-disk format is one `A.B.C.D/len,lat,lon` entry per line; blank
/// lines and anything after `#` are ignored. When the same prefix appears
/// twice the later line wins.
#[derive(Debug, Clone, Default)]
pub struct IpLocator {
    /// Indexed by prefix length, keyed by the masked network address.
    by_len: Vec<HashMap<u32, GeoCoord>>,
    /// Populated prefix lengths, longest first.
    lens: Vec<u8>,
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(len))
    }
}

impl IpLocator {
    pub fn new() -> Self {
        Self {
            by_len: vec![HashMap::new(); 33],
            lens: Vec::new(),
        }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (Ipv4Addr, u8, GeoCoord)>) -> Self {
        let mut locator = Self::new();
        for (net, len, coord) in entries {
            locator.insert(net, len, coord);
        }
        locator
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LocatorError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, LocatorError> {
        let mut locator = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| LocatorError::Parse { line: idx + 1, reason };
            let mut fields = line.split(',').map(str::trim);
            let (Some(cidr), Some(lat), Some(lon), None) = (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(err(format!("expected `cidr,lat,lon`, got `{line}`")));
            };
            let (net, len) = parse_cidr(cidr).map_err(err)?;
            let lat: f64 = lat.parse().map_err(|_| err(format!("bad latitude `{lat}`")))?;
            let lon: f64 = lon.parse().map_err(|_| err(format!("bad longitude `{lon}`")))?;
            let coord = GeoCoord::new(lat, lon).map_err(|e| err(e.to_string()))?;
            locator.insert(net, len, coord);
        }
        Ok(locator)
    }

    /// Adds or replaces a prefix. Host bits in `net` are ignored.
    pub fn insert(&mut self, net: Ipv4Addr, len: u8, coord: GeoCoord) {
        assert!(len <= 32, "prefix length {len} > 32");
        let key = u32::from(net) & mask(len);
        self.by_len[usize::from(len)].insert(key, coord);
        if !self.lens.contains(&len) {
            self.lens.push(len);
            self.lens.sort_unstable_by(|a, b| b.cmp(a));
        }
    }

    pub fn len(&self) -> usize {
        self.by_len.iter().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Longest-prefix match; `None` when no prefix covers `ip`.
    pub fn resolve(&self, ip: Ipv4Addr) -> Option<GeoCoord> {
        let addr = u32::from(ip);
        self.lens
            .iter()
            .find_map(|&len| self.by_len[usize::from(len)].get(&(addr & mask(len))).copied())
    }

    /// Parses `ip` first; malformed addresses are an error.
    pub fn resolve_str(&self, ip: &str) -> Result<Option<GeoCoord>, std::net::AddrParseError> {
        Ok(self.resolve(ip.trim().parse()?))
    }
}

fn parse_cidr(cidr: &str) -> Result<(Ipv4Addr, u8), String> {
    let (addr, len) = cidr
        .split_once('/')
        .ok_or_else(|| format!("`{cidr}` is missing a prefix length"))?;
    let addr: Ipv4Addr = addr.parse().map_err(|_| format!("bad address `{addr}`"))?;
    let len: u8 = len.parse().map_err(|_| format!("bad prefix length `{len}`"))?;
    if len > 32 {
        return Err(format!("prefix length {len} > 32"));
    }
    Ok((addr, len))
}
