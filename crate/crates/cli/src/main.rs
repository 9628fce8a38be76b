use clap::Parser;

fn main() {
    let cli = moco_cli::Cli::parse();
    if let Err(e) = moco_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(moco_cli::exit_code(&e));
    }
}
