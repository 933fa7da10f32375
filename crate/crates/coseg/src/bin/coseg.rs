use clap::Parser;

fn main() {
    let cli = coseg::cli::Cli::parse();
    if let Err(err) = coseg::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(coseg::cli::exit_code(&err));
    }
}
