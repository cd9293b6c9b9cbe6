use clap::Parser;

fn main() {
    let cli = qmfd_cli::Cli::parse();
    std::process::exit(qmfd_cli::run_cli(&cli));
}
