use clap::Parser;

fn main() {
    let cli = deal_lab::cli::Cli::parse();
    if let Err(e) = deal_lab::cli::run(cli) {
        eprintln!("error: {}", e);
        std::process::exit(e.exit_code());
    }
}
