use std::fmt;

use soh_fusion::Error;

/// Pipeline stage a failure belongs to; decides the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Training,
    Pool,
    Manifest,
    /// Weight fitting, forecasting, scoring and output.
    Run,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Run => 1,
            Stage::Config => 2,
            Stage::Data => 3,
            Stage::Training => 4,
            Stage::Pool => 5,
            Stage::Manifest => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Training => "training",
            Stage::Pool => "pool",
            Stage::Manifest => "manifest",
            Stage::Run => "run",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub stage: Stage,
    pub message: String,
}

impl CliError {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        CliError {
            stage,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Stage::Config, message)
    }

    pub fn code(&self) -> i32 {
        self.stage.exit_code()
    }

    /// Wraps a library error raised during `stage`.
    pub fn at(stage: Stage) -> impl Fn(Error) -> CliError {
        move |e| CliError::new(stage, e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.stage.name(), self.message)
    }
}

impl std::error::Error for CliError {}

/// Files written by a command fail the command, not a pipeline stage.
pub fn io_err(path: &std::path::Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::new(Stage::Run, format!("{}: {e}", path.display()))
}
