use clap::Parser;

fn main() {
    let cli = trackgraph::cli::Cli::parse();
    if let Err(e) = trackgraph::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
