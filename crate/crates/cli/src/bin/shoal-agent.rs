use anyhow::Context;
use clap::Parser;
use shoal_agent::{Agent, AgentConfig};
use shoal_cli::{init_tracing, shutdown_signal, ConfigArgs};

/// Advertises a local cache to a shoal server with periodic heartbeats.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    /// Sets `agent.server_url`.
    #[arg(long, value_name = "URL")]
    server: Option<String>,
    /// Send one heartbeat and exit.
    #[arg(long)]
    once: bool,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    init_tracing();
    let mut settings = cli.config.settings()?;
    if let Some(url) = &cli.server {
        settings.set("agent.server_url", url.as_str());
    }
    let config = AgentConfig::from_settings(&settings).context("agent configuration")?;
    let mut agent = Agent::from_config(config)?;
    if cli.once {
        agent.tick().await?;
        println!("{}", agent.id());
        return Ok(());
    }
    agent.run(shutdown_signal()).await;
    Ok(())
}
