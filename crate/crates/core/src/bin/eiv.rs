use clap::Parser;

fn main() {
    let cli = eiv_core::cli::Cli::parse();
    if let Err(e) = eiv_core::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
