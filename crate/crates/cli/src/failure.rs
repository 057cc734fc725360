use std::process::ExitCode;

use tgpt_core::{Error, ErrorKind};

/// A failed command, reported as one `error[<category>]: <reason>` line on
/// stderr.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Config(String),
    Data(String),
    Runtime(String),
}

impl Failure {
    pub fn from_clap(e: &clap::Error) -> Failure {
        let text = e.to_string();
        let reason: Vec<&str> = text
            .lines()
            .map(str::trim)
            .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
            .filter(|l| !l.is_empty())
            .collect();
        Failure::Usage(reason.join(" ").trim_start_matches("error: ").to_string())
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Runtime(_) => 1,
        }
    }

    fn category(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Config(_) => "config",
            Failure::Data(_) => "data",
            Failure::Runtime(_) => "runtime",
        }
    }

    pub fn report(&self) -> ExitCode {
        let (Failure::Usage(m) | Failure::Config(m) | Failure::Data(m) | Failure::Runtime(m)) = self;
        let one_line = m.split_whitespace().collect::<Vec<_>>().join(" ");
        eprintln!("error[{}]: {one_line}", self.category());
        ExitCode::from(self.code())
    }

    /// Prefix the reason with where the failure happened.
    pub fn context(self, what: impl std::fmt::Display) -> Failure {
        match self {
            Failure::Usage(m) => Failure::Usage(format!("{what}: {m}")),
            Failure::Config(m) => Failure::Config(format!("{what}: {m}")),
            Failure::Data(m) => Failure::Data(format!("{what}: {m}")),
            Failure::Runtime(m) => Failure::Runtime(format!("{what}: {m}")),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        match e.kind() {
            ErrorKind::Config => Failure::Config(e.to_string()),
            ErrorKind::Data => Failure::Data(e.to_string()),
            ErrorKind::Runtime => Failure::Runtime(e.to_string()),
        }
    }
}
