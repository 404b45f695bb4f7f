//! Command-line front end: argument parsing, input resolution, report
//! writing and run manifests.

pub mod args;
mod commands;
mod config;
pub mod inputs;
pub mod manifest;
mod table;

use std::ffi::OsString;
use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

pub use manifest::{emit_reports, OutFile, RunManifest};

/// Error reported as `{"error": {"kind", "message"}}` on standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.to_string(),
            message: message.into(),
        }
    }

    pub fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl From<crossphase::Error> for CliError {
    fn from(e: crossphase::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                crossphase::Error::from(e).into()
            }
        }
    )*};
}
via_core!(
    crossphase::netmodel::NetError,
    crossphase::carson::CarsonError,
    crossphase::solver::SolveError,
    crossphase::sensitivity::SensitivityError,
    crossphase::control::ControlError
);

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": e }));
    ExitCode::from(1)
}

/// Runs the tool on `argv` (including the program name).
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn execute(cli: &args::Cli) -> Result<(), CliError> {
    let out = commands::execute(&cli.command)?;
    let parameters = serde_json::to_value(&cli.command).expect("arguments serialize");
    let manifest = RunManifest::new(cli.command.name(), out.inputs, out.instances, out.strategy, parameters);
    let text = if cli.json {
        manifest::bundle_json(&manifest, &out.result)
    } else {
        out.stdout
    };
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            return Err(CliError::new("io", format!("stdout: {e}")))
        }
        _ => {}
    }
    if let Some(dir) = &cli.out_dir {
        let mut files = vec![OutFile::new(format!("{}.json", out.stem), manifest::bundle_json(&manifest, &out.result))];
        files.extend(out.files);
        for p in emit_reports(dir, &manifest, &files)? {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(())
}
