//! Human-readable status page.

use std::fmt::Write;
use std::sync::Arc;

use shoal_core::geo::{haversine_km, GeoCoord};
use shoal_core::registry::CacheRecord;
use shoal_core::Timestamp;

const REFRESH_S: u32 = 30;

pub fn render(records: &[Arc<CacheRecord>], server_location: Option<GeoCoord>, now: Timestamp) -> String {
    let mut html = String::with_capacity(512 + records.len() * 160);
    html.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n");
    let _ = writeln!(html, "<meta http-equiv=\"refresh\" content=\"{REFRESH_S}\">");
    html.push_str("<title>Shoal</title>\n</head>\n<body>\n<h1>Shoal</h1>\n");
    let _ = writeln!(html, "<p class=\"banner\">{} tracked</p>", records.len());
    html.push_str(
        "<table>\n<tr><th>Hostname</th><th>Public IP</th><th>Distance (km)</th><th>Load</th><th>Last heartbeat (s ago)</th></tr>\n",
    );
    for r in records {
        let distance = match server_location.zip(r.geo) {
            Some((s, g)) => format!("{:.0}", haversine_km(s, g)),
            None => "-".to_owned(),
        };
        // Hostnames are restricted to DNS characters at ingestion, so they
        // need no escaping.
        let _ = writeln!(
            html,
            "<tr class=\"squid\"><td>{}</td><td>{}:{}</td><td>{}</td><td>{:.2}</td><td>{:.0}</td></tr>",
            r.hostname,
            r.public_ip,
            r.port,
            distance,
            r.load,
            r.age(now).max(0.0)
        );
    }
    html.push_str("</table>\n</body>\n</html>\n");
    html
}
