//! `lrtabl` — train, evaluate, and profile bilinear / temporal-attention
//! networks on order-book time series.
//!
//! Every failure exits with a one-line, machine-parsable message on stderr
//! (`error: <category>: <details>`) and a stable exit code: 2 for data and
//! configuration problems, 3 for checkpoint/spec compatibility problems,
//! 4 for numerical divergence, 1 for internal errors.

mod args;
mod commands;
mod config;
mod report;

use args::{Cli, Command};
use clap::error::ErrorKind;
use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("bad arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error: config_invalid: {first}");
            std::process::exit(2);
        }
    };
    let result = match &cli.command {
        Command::Count(args) => commands::cmd_count(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Sweep(args) => commands::cmd_sweep(args),
        Command::Bench(args) => commands::cmd_bench(args),
    };
    if let Err(err) = result {
        eprintln!("error: {}: {err}", err.category());
        std::process::exit(err.exit_code());
    }
}
