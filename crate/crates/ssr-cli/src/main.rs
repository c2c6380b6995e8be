use clap::Parser;

#[tokio::main]
async fn main() {
    let cli = ssr_cli::Cli::parse();
    if let Err(e) = ssr_cli::dispatch(cli).await {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
