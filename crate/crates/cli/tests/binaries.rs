use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

const CLIENT: &str = env!("CARGO_BIN_EXE_shoal-client");
const SERVER: &str = env!("CARGO_BIN_EXE_shoal-server");
const AGENT: &str = env!("CARGO_BIN_EXE_shoal-agent");
const BENCH: &str = env!("CARGO_BIN_EXE_shoal-bench");

fn client(args: &[&str]) -> (i32, String) {
    let out = Command::new(CLIENT).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap())
}

struct Server {
    child: Child,
    url: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn server(extra: &[&str]) -> Server {
    let mut child = Command::new(SERVER)
        .args([
            "--set",
            "server.bind=127.0.0.1",
            "--set",
            "server.port=0",
            "--set",
            "server.access_log=false",
        ])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .expect("listen banner")
        .to_owned();
    Server { child, url }
}

#[test]
fn client_usage_codes() {
    assert_eq!(client(&["--help"]).0, 0);
    assert_eq!(client(&["--bogus"]).0, 1);
    assert_eq!(client(&["--count", "0"]).0, 1);
    assert_eq!(client(&["--count", "x"]).0, 1);
    assert_eq!(client(&["--format", "xml"]).0, 1);
}

#[test]
fn client_unreachable_is_network_failure() {
    assert_eq!(client(&["--server", "http://127.0.0.1:9"]).0, 2);
}

#[test]
fn server_agent_client_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.csv");
    std::fs::write(&table, "127.0.0.0/8,48.46,-123.31\n").unwrap();
    let table_arg = format!("geo.table_path={}", table.display());
    let srv = server(&["--set", &table_arg]);

    assert_eq!(client(&["--server", &srv.url]).0, 3);

    let state = dir.path().join("id");
    let out = Command::new(AGENT)
        .args(["--server", &srv.url, "--once"])
        .env("SHOAL_AGENT_STATE_PATH", &state)
        .env("SHOAL_AGENT_HOSTNAME", "squid.example.org")
        .env("SHOAL_AGENT_LOAD_SOURCE", "static:1.5")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let id = String::from_utf8(out.stdout).unwrap().trim().to_owned();
    assert_eq!(std::fs::read_to_string(&state).unwrap().trim(), id);

    let mut result = (0, String::new());
    for _ in 0..100 {
        result = client(&["--server", &srv.url, "--count", "3"]);
        if result.0 == 0 {
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    assert_eq!(result, (0, "http://squid.example.org:3128\n".to_owned()));
    let (code, table) = client(&["--server", &srv.url, "--format", "table"]);
    assert_eq!(code, 0);
    assert!(table.starts_with("HOSTNAME") && table.contains("squid.example.org"));
}

#[test]
fn bench_against_external_server() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("fleet.csv");
    let out = Command::new(BENCH).arg("locator").output().unwrap();
    std::fs::write(&table, &out.stdout).unwrap();
    let table_arg = format!("geo.table_path={}", table.display());
    let srv = server(&["--set", &table_arg, "--set", "server.trust_xff=true"]);
    let report = dir.path().join("report.jsonl");
    let run = |args: &[&str]| {
        let out = Command::new(BENCH)
            .args(args)
            .args(["--server", &srv.url, "--report"])
            .arg(&report)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    assert!(run(&["populate", "--n", "30", "--seed", "2"]).contains("registered 30 of 30"));
    assert!(run(&["http", "--concurrency", "2", "--duration", "0.3"]).contains("rps"));
    assert!(run(&["ingest", "--rate", "600", "--duration", "1"]).contains("sent 10 applied 10 dropped 0"));

    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&report)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let kinds: Vec<&str> = lines.iter().map(|l| l["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["populate", "http", "ingest"]);
    assert_eq!(lines[1]["params"]["options"]["concurrency"], 2);
    assert!(lines[1]["metrics"]["completed"].as_u64().unwrap() > 0);
}

#[test]
fn bench_rejects_bad_duration() {
    let out = Command::new(BENCH).args(["http", "--duration", "0"]).output().unwrap();
    assert!(!out.status.success());
}
