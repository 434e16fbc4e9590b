use clap::Parser;

fn main() {
    let args = rt4u::cli::Cli::parse();
    if let Err(e) = rt4u::cli::run(args) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
