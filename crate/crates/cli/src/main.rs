use std::process::ExitCode;

use clap::Parser;

mod args;
mod assign;
mod crf;
mod eval;
mod fuse;
mod io;
mod plan;
mod settings;
mod synth;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth::run(a, &file),
        Command::Fuse(a) => fuse::run(a, &file),
        Command::Crf(a) => crf::run(a, &file),
        Command::Assign(a) => assign::run(a, &file),
        Command::Eval(a) => eval::run(a, &file),
        Command::Plan(a) => plan::run(a),
    }
}

/// 2 for anything that failed at the filesystem, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<attnseg::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(image::ImageError::IoError(_)) = cause.downcast_ref::<image::ImageError>() {
            return 2;
        }
    }
    1
}
