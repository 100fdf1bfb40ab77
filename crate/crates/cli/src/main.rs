//! `smal`: command-line driver of the articulated animal pipeline.
//!
//! Exit codes: 0 success, 1 invalid input or failed checks, 2 solver
//! failure, 3 I/O failure.

mod args;
mod commands;
mod context;
mod dataset;

use std::process::ExitCode;

use clap::Parser;
use smal_core::config::PipelineConfig;
use smal_core::{Error, ErrorKind};

use args::{Cli, Command};
use context::Context;

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation => 1,
        ErrorKind::Solver => 2,
        ErrorKind::Io => 3,
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Register(_) => "register",
        Command::BuildModel(_) => "build-model",
        Command::FitImage(_) => "fit-image",
        Command::Verify(_) => "verify",
        Command::Render(_) => "render",
    }
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let g = &cli.global;
    let mut config = PipelineConfig::load(g.config.as_deref(), &g.overrides)?;
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(jobs) = g.jobs {
        config.jobs = jobs;
    }
    if config.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build_global()
            .map_err(|e| {
                Error::InvalidArgument(format!("cannot start {} worker threads: {e}", config.jobs))
            })?;
    }
    let out_dir = g
        .out_dir
        .clone()
        .unwrap_or_else(|| config.paths.output.clone());
    let mut ctx = Context::new(config, out_dir, command_name(&cli.command))?;
    let ok = match &cli.command {
        Command::Synth(a) => commands::synth::run(&mut ctx, a)?,
        Command::Register(a) => commands::register::run(&mut ctx, a)?,
        Command::BuildModel(a) => commands::build_model::run(&mut ctx, a)?,
        Command::FitImage(a) => commands::fit_image::run(&mut ctx, a)?,
        Command::Verify(a) => commands::verify::run(&mut ctx, a)?,
        Command::Render(a) => commands::render::run(&mut ctx, a)?,
    };
    ctx.finish()?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
