use clap::Parser;

fn main() {
    let cli = rbbf_cli::Cli::parse();
    if let Err(e) = rbbf_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(rbbf_cli::exit_code(&e));
    }
}
