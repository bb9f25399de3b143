mod args;
mod commands;

use std::process::ExitCode;

use ciphertune::Error;
use clap::Parser;

use args::{Cli, Command};

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Format { .. } => 3,
        Error::DigestMismatch
        | Error::Params(_)
        | Error::ScaleMismatch { .. }
        | Error::MissingRotationKey(_)
        | Error::Capacity { .. } => 4,
        Error::DepthExhausted { .. } => 5,
        Error::Io(_) => 6,
        _ => 1,
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("BT_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .map_err(|_| Error::Config(format!("BT_THREADS={v:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<(), Error> {
    init_threads()?;
    match &cli.command {
        Command::Keygen(a) => commands::keygen_cmd(a),
        Command::Encrypt(a) => commands::encrypt_cmd(a),
        Command::TrainCloud(a) => commands::train_cloud_cmd(a),
        Command::TrainLocal(a) => commands::train_local_cmd(a),
        Command::TrainPlain(a) => commands::train_plain_cmd(a),
        Command::Validate(a) => commands::validate_cmd(a),
        Command::DecryptModel(a) => commands::decrypt_model_cmd(a),
        Command::Infer(a) => commands::infer_cmd(a),
        Command::SynthData(a) => commands::synth_cmd(a),
        Command::Report(a) => commands::report_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
