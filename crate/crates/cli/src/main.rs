mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// A failed run: exit code 2 for invalid input, 1 for everything else.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            kind: "usage",
            message: message.into(),
        }
    }

    /// A library error raised while validating input.
    pub fn invalid(e: adaptive_sensing::Error) -> Self {
        Failure {
            code: 2,
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<adaptive_sensing::Error> for Failure {
    fn from(e: adaptive_sensing::Error) -> Self {
        let code = if matches!(e, adaptive_sensing::Error::Usage(_)) { 2 } else { 1 };
        Failure {
            code,
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bounds { common, source } => commands::bounds(&common, source.as_deref()),
        Command::SweepLambda { common } => commands::sweep_lambda(&common),
        Command::SweepGain { common, policies } => commands::sweep_gain(&common, &policies),
        Command::TailCheck {
            common,
            epsilon,
            lambda,
            r_db,
        } => commands::tail_check(&common, epsilon, lambda, r_db),
        Command::Trial {
            common,
            policy,
            lambda,
            r_db,
        } => commands::trial(&common, &policy, lambda, r_db),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let body = serde_json::json!({ "error": f.kind, "message": f.message, "exit_code": f.code });
            eprintln!("{body}");
            ExitCode::from(f.code)
        }
    }
}
