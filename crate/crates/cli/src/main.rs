use clap::Parser;
use claimsift_cli::cli::{execute, Cli};
use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Err(e) = execute(cli.command, |k| std::env::var(k).ok()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
