use clap::Parser;

fn main() {
    std::process::exit(ifslab_cli::main_with(ifslab_cli::Cli::parse()));
}
