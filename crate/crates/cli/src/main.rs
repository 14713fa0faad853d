use clap::Parser;

fn main() {
    std::process::exit(eglass_cli::run(eglass_cli::Cli::parse()));
}
