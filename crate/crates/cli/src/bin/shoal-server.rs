use anyhow::Context;
use clap::Parser;
use shoal_cli::{init_tracing, shutdown_signal, ConfigArgs};
use shoal_server::ServerConfig;
use tracing::info;

/// Tracks cache heartbeats and answers nearest-cache queries over HTTP.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    init_tracing();
    let config = ServerConfig::from_settings(&cli.config.settings()?).context("server configuration")?;
    let server = shoal_server::start(config).await?;
    println!("listening on {}", server.url());
    shutdown_signal().await;
    info!("shutting down");
    server.shutdown().await;
    Ok(())
}
