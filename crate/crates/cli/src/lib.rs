//! Helpers shared by the shoal binaries.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use shoal_core::Settings;
use tracing_subscriber::EnvFilter;

/// `--config FILE` and repeatable `--set key=value`.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// `key=value` configuration file.
    #[arg(short, long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides one key; applied after the file and `SHOAL_*` variables.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    /// File, then environment, then `--set`.
    pub fn settings(&self) -> anyhow::Result<Settings> {
        let base = match &self.config {
            Some(path) => Settings::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => Settings::new(),
        };
        let mut settings = base.with_process_env();
        for item in &self.overrides {
            let Some((key, value)) = item.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{item}`");
            };
            settings.set(key.trim(), value.trim());
        }
        Ok(settings)
    }
}

/// Logs to stderr; `RUST_LOG` overrides the default `info` level.
pub fn init_tracing() {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
