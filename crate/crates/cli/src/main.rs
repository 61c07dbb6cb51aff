//! `herald`: command-line front end for the heralded-source toolkit.
//!
//! Exit codes: 0 success, 2 usage error, 3 numeric or contract error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    CountArgs, CurveArgs, FitArgs, JsiArgs, PipelineArgs, PovmArgs, ReplayArgs, SimulateArgs,
};

#[derive(Debug, Parser)]
#[command(
    name = "herald",
    version,
    about = "Heralded single-photon source modeling and count analysis"
)]
#[command(args_override_self = true)]
struct Cli {
    /// Plain-text `key=value` file; keys are long flag names. Flags on the
    /// command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize or ingest a JSI and report its Schmidt spectrum.
    Jsi(JsiArgs),
    /// Sweep μ and tabulate g²(0) for threshold and PNR heralding.
    Curve(CurveArgs),
    /// Fock coefficients of the single-photon POVM element.
    Povm(PovmArgs),
    /// Generate a time-tag stream.
    Simulate(SimulateArgs),
    /// Count coincidences in a tag file.
    Count(CountArgs),
    /// Fit efficiencies, μ and tree depth to count summaries.
    Fit(FitArgs),
    /// Simulate, count and fit a power sweep end to end.
    Pipeline(PipelineArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Numeric(anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::Usage(anyhow::anyhow!("{msg}"))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<herald_core::Error> for CliError {
    fn from(e: herald_core::Error) -> Self {
        CliError::Numeric(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Turns `key=value` lines into `--key value` arguments. `key=true` becomes a
/// bare flag, `key=false` is dropped. Blank lines and `#` comments are skipped.
fn config_args(text: &str) -> CliResult<Vec<String>> {
    let mut args = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected key=value", n + 1)))?;
        let key = key.trim().replace('_', "-");
        match value.trim() {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            v => {
                args.push(format!("--{key}"));
                args.push(v.to_string());
            }
        }
    }
    Ok(args)
}

/// Removes `--config FILE` from `argv` and splices the file's arguments in
/// right after the subcommand, ahead of the user's own flags.
fn expand_config(argv: Vec<String>) -> CliResult<Vec<String>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            config = Some(
                it.next()
                    .ok_or_else(|| CliError::usage("--config needs a file"))?,
            );
        } else if let Some(path) = arg.strip_prefix("--config=") {
            config = Some(path.to_string());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(anyhow::anyhow!("cannot read config {path}: {e}")))?;
    let extra = config_args(&text)?;
    let at = rest
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map_or(rest.len(), |i| i + 2);
    rest.splice(at..at, extra);
    Ok(rest)
}

pub fn run(argv: Vec<String>) -> CliResult<()> {
    let argv = expand_config(argv)?;
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            let text = text
                .strip_prefix("error: ")
                .unwrap_or(&text)
                .trim_end()
                .to_string();
            return Err(CliError::Usage(anyhow::anyhow!(text)));
        }
    };
    let _ = cli.config;
    match cli.command {
        Command::Jsi(a) => commands::jsi(&a, &argv),
        Command::Curve(a) => commands::curve(&a, &argv),
        Command::Povm(a) => commands::povm(&a, &argv),
        Command::Simulate(a) => commands::simulate(&a, &argv),
        Command::Count(a) => commands::count(&a, &argv),
        Command::Fit(a) => commands::fit(&a, &argv),
        Command::Pipeline(a) => commands::pipeline(&a, &argv),
        Command::Replay(a) => commands::replay(&a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(err) | CliError::Numeric(err) => eprintln!("error: {err:#}"),
            }
            ExitCode::from(e.code())
        }
    }
}
