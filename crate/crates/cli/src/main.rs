use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod datagen;
mod eval;
mod infer;
mod train;

#[derive(Parser)]
#[command(name = "otvm", version, about = "One-trimap video matting")]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesise training clips from foreground/alpha and background images.
    Datagen(datagen::Args),
    /// Run one training stage.
    Train(train::Args),
    /// Matte a frame sequence from its first-frame trimap.
    Infer(infer::Args),
    /// Score predicted alpha mattes against ground truth.
    Eval(eval::Args),
}

/// Bad arguments, missing files and unreadable inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Fail with a usage error unless `p` is an existing directory.
pub fn require_dir(p: &std::path::Path, what: &str) -> anyhow::Result<()> {
    if !p.is_dir() {
        return Err(usage(format!(
            "{what} `{}` is not a directory",
            p.display()
        )));
    }
    Ok(())
}

pub fn require_file(p: &std::path::Path, what: &str) -> anyhow::Result<()> {
    if !p.is_file() {
        return Err(usage(format!("{what} `{}` does not exist", p.display())));
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use otvm::OtvmError as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_) | E::Image(_) | E::Config(_) | E::Checkpoint(_) | E::UnknownSetting(_) => {
                    2
                }
                _ => 1,
            };
        }
    }
    1
}

fn default_log_level(v: u8) -> &'static str {
    match v {
        0 => "warn",
        1 => "info",
        _ => "debug",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or(default_log_level(cli.verbose)),
    )
    .init();
    let res = match cli.cmd {
        Cmd::Datagen(a) => datagen::run(a),
        Cmd::Train(a) => train::run(a),
        Cmd::Infer(a) => infer::run(a),
        Cmd::Eval(a) => eval::run(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
