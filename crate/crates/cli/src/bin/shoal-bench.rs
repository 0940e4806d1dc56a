use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::bail;
use clap::{Parser, Subcommand};
use serde_json::json;
use shoal_bench::{
    append_report, fit_slope, fleet, populate, run_http_load, run_ingest_load, sweep, ClientSpread, LoadOptions,
    LoadReport,
};

/// Load generator and measurement harness for a shoal server.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Append one JSON record per run to this file.
    #[arg(long, global = true, value_name = "FILE")]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a synthetic fleet through the heartbeat endpoint.
    Populate {
        #[arg(long, default_value = "http://localhost:8080")]
        server: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Closed-loop /nearest load.
    Http {
        #[arg(long, default_value = "http://localhost:8080")]
        server: String,
        #[arg(long, default_value_t = 100)]
        concurrency: usize,
        /// Seconds.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 5)]
        count: usize,
        /// Send no X-Forwarded-For; all requests come from this host.
        #[arg(long)]
        no_spread: bool,
    },
    /// Paced heartbeat publishing with full message accounting.
    Ingest {
        #[arg(long, default_value = "http://localhost:8080")]
        server: String,
        /// Messages per minute.
        #[arg(long, default_value_t = 10_000)]
        rate: u64,
        /// Seconds.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
    },
    /// Mean latency against in-process servers of increasing size.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000,8000")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        concurrency: usize,
        /// Seconds per point.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Enable the per-subnet result cache.
        #[arg(long)]
        cache: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the locator table that places the synthetic fleet.
    Locator,
}

fn seconds(s: f64) -> anyhow::Result<Duration> {
    if !(s.is_finite() && s > 0.0) {
        bail!("duration must be a positive number of seconds");
    }
    Ok(Duration::from_secs_f64(s))
}

fn print_load(r: &LoadReport) {
    println!(
        "{:>11} {:>9} {:>10} {:>7} {:>9} {:>9} {:>9} {:>9}",
        "concurrency", "duration", "completed", "errors", "mean_ms", "p50_ms", "p95_ms", "rps"
    );
    println!(
        "{:>11} {:>9.1} {:>10} {:>7} {:>9.2} {:>9.2} {:>9.2} {:>9.1}",
        r.concurrency, r.duration_s, r.completed, r.errors, r.mean_ms, r.p50_ms, r.p95_ms, r.rps
    );
}

fn record(
    path: Option<&Path>,
    kind: &str,
    params: serde_json::Value,
    metrics: serde_json::Value,
) -> anyhow::Result<()> {
    if let Some(path) = path {
        append_report(path, kind, &params, &metrics)?;
    }
    Ok(())
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    shoal_cli::init_tracing();
    let report = cli.report.as_deref();
    match cli.command {
        Command::Populate { server, n, seed } => {
            let r = populate(&server, n, seed).await?;
            println!(
                "registered {} of {n} caches (seed {seed}) in {:.2} s",
                r.applied, r.elapsed_s
            );
            record(
                report,
                "populate",
                json!({"server": server, "n": n, "seed": seed}),
                json!(r),
            )?;
        }
        Command::Http {
            server,
            concurrency,
            duration,
            count,
            no_spread,
        } => {
            let opts = LoadOptions {
                count,
                spread: if no_spread {
                    ClientSpread::Peer
                } else {
                    ClientSpread::PerWorker
                },
                ..LoadOptions::new(concurrency, seconds(duration)?)
            };
            let r = run_http_load(&server, &opts).await?;
            print_load(&r);
            record(report, "http", json!({"server": server, "options": opts}), json!(r))?;
        }
        Command::Ingest { server, rate, duration } => {
            let r = run_ingest_load(&server, rate, seconds(duration)?).await?;
            println!(
                "sent {} applied {} dropped {} malformed {} ({:.1} s)",
                r.sent, r.applied, r.dropped, r.malformed, r.elapsed_s
            );
            record(
                report,
                "ingest",
                json!({"server": server, "rate_per_min": rate, "duration_s": duration}),
                json!(r),
            )?;
        }
        Command::Sweep {
            n_list,
            concurrency,
            duration,
            cache,
            seed,
        } => {
            let opts = LoadOptions::new(concurrency, seconds(duration)?);
            let points = sweep(&n_list, &opts, cache, seed).await?;
            println!(
                "{:>8} {:>9} {:>9} {:>9} {:>9}",
                "n", "mean_ms", "p50_ms", "p95_ms", "rps"
            );
            for p in &points {
                println!(
                    "{:>8} {:>9.2} {:>9.2} {:>9.2} {:>9.1}",
                    p.n, p.report.mean_ms, p.report.p50_ms, p.report.p95_ms, p.report.rps
                );
            }
            let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.n as f64, p.report.mean_ms)).collect();
            let fit = fit_slope(&xy).ok();
            if let Some(f) = &fit {
                println!("slope {:.2} ms per 1000 caches, r2 {:.3}", f.slope_ms_per_1000, f.r2);
            }
            record(
                report,
                "sweep",
                json!({"n_list": n_list, "options": opts, "cache": cache, "seed": seed}),
                json!({"points": points, "fit": fit}),
            )?;
        }
        Command::Locator => print!("{}", fleet::locator_table()),
    }
    Ok(())
}
