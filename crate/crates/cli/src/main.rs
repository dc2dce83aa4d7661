mod args;
mod commands;
mod config;
mod error;
mod manifest;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};
use error::CliError;

fn run(cli: &Cli, matches: &clap::ArgMatches) -> Result<(), CliError> {
    let default_threads = match cli.command {
        Command::Bench(_) => 1,
        _ => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    commands::set_threads(cli.threads.unwrap_or(default_threads))?;
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand required");
    match &cli.command {
        Command::Train(a) => commands::train(a, sub),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Classify(a) => commands::classify(a),
        Command::Gradcam(a) => commands::gradcam(a),
        Command::Augment(a) => commands::augment(a),
        Command::Score(a) => commands::score(a),
    }
}

fn main() {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    if let Err(e) = run(&cli, &matches) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
