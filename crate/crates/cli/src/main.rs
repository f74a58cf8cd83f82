use clap::Parser;
use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = cgmqa_cli::Cli::parse();
    let mut stdin = std::io::BufReader::new(std::io::stdin());
    let mut stdout = std::io::stdout();
    if let Err(e) = cgmqa_cli::run(cli, &mut stdout, &mut stdin) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
