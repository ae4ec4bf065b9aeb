use clap::Parser;
use sdereach::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
