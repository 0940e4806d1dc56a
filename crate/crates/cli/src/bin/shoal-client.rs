use clap::Parser;
use shoal_client::{exit, query, Format, DEFAULT_COUNT};

/// Prints the nearest caches known to a shoal server.
///
/// Exit status: 0 success, 1 bad usage, 2 network failure, 3 no caches.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Server base URL.
    #[arg(long, default_value = "http://localhost:8080")]
    server: String,
    /// Number of caches to request.
    #[arg(long, default_value_t = DEFAULT_COUNT as u64, value_parser = clap::value_parser!(u64).range(1..=100))]
    count: u64,
    /// `proxy` for an http_proxy fallback chain, `table` for humans.
    #[arg(long, default_value = "proxy")]
    format: Format,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { exit::USAGE } else { exit::SUCCESS });
        }
    };
    match query(&cli.server, cli.count as usize, cli.format) {
        Ok(out) => {
            println!("{}", out.trim_end());
        }
        Err(e) => {
            eprintln!("shoal-client: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
