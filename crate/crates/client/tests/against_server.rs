use std::net::Ipv4Addr;
use std::time::Duration;

use shoal_client::{fetch_nearest, query, ClientError, Format};
use shoal_core::{Heartbeat, IpLocator};
use shoal_server::{start_with_locator, ServerConfig, ServerHandle};

async fn server_with(n: u8) -> ServerHandle {
    let config = ServerConfig {
        bind: "127.0.0.1".parse().unwrap(),
        port: 0,
        access_log: false,
        ..ServerConfig::default()
    };
    let srv = start_with_locator(config, IpLocator::parse("100.64.0.0/16,10,10\n").unwrap())
        .await
        .unwrap();
    for i in 0..n {
        let hb = Heartbeat {
            id: format!("c{i}"),
            hostname: format!("c{i}.example.org"),
            public_ip: Ipv4Addr::new(100, 64, 0, i),
            port: 3128,
            load: f64::from(n - i),
            timestamp: 1.0,
            interval_s: 30,
        };
        srv.state().apply_heartbeat(&hb.encode());
    }
    srv
}

#[tokio::test(flavor = "multi_thread")]
async fn fetches_all_available() {
    let srv = server_with(2).await;
    let url = srv.url();
    let resp = tokio::task::spawn_blocking(move || fetch_nearest(&url, 5))
        .await
        .unwrap()
        .unwrap();
    assert_eq!(resp.len(), 2);
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn passes_server_order_through() {
    let srv = server_with(6).await;
    let url = srv.url();
    let direct: Vec<String> = reqwest::get(format!("{url}/nearest?count=4"))
        .await
        .unwrap()
        .json::<Vec<serde_json::Value>>()
        .await
        .unwrap()
        .iter()
        .map(|e| format!("http://{}:{}", e["hostname"].as_str().unwrap(), e["port"]))
        .collect();
    let chain = tokio::task::spawn_blocking(move || query(&url, 4, Format::Proxy))
        .await
        .unwrap()
        .unwrap();
    assert_eq!(chain, direct.join(";"));
    assert!(chain.starts_with("http://c5.example.org:3128;"));
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn empty_registry_is_distinct_error() {
    let srv = server_with(0).await;
    let url = srv.url();
    let err = tokio::task::spawn_blocking(move || query(&url, 5, Format::Proxy))
        .await
        .unwrap()
        .unwrap_err();
    assert!(matches!(err, ClientError::Empty));
    assert_eq!(err.exit_code(), 3);
    srv.shutdown().await;
}

#[test]
fn unreachable_times_out_or_refuses() {
    let start = std::time::Instant::now();
    let err = fetch_nearest("http://127.0.0.1:9", 5).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(start.elapsed() < Duration::from_secs(6));
}
