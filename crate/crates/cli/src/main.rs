//! `dcmatch` command-line tool.
//!
//! Exit codes: 0 success, 1 usage, 2 data or format error, 3 numerical
//! consistency failure (including a failed gradient check).

mod args;
mod commands;
mod error;

use clap::Parser;

use args::{Cli, Command};
use error::{CliResult, EXIT_USAGE};

fn run(cli: &Cli) -> CliResult<()> {
    if cli.jobs > 0 {
        // fails only when a pool already exists, which is harmless here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global();
    }
    match &cli.command {
        Command::Dcorr(a) => commands::dcorr(a),
        Command::Synth(a) => commands::synth(a),
        Command::Eval(a) => commands::eval(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Compare(a) => commands::compare(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
