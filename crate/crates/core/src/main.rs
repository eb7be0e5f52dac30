use clap::Parser;

fn main() {
    std::process::exit(qspline::cli::main_with(qspline::cli::Cli::parse()));
}
