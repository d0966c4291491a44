use clap::Parser;

fn main() {
    let cli = drmean::cli::Cli::parse();
    std::process::exit(drmean::cli::run(cli));
}
