use biconmp_cli::{run, Args};
use clap::Parser;

fn main() {
    std::process::exit(run(&Args::parse()));
}
