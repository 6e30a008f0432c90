use clap::Parser;

use softreg::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("softreg: {e}");
        std::process::exit(e.exit_code());
    }
}
