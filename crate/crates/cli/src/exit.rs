//! Error-to-exit-code mapping, part of the CLI contract:
//! 1 I/O, 2 usage, 3 simulator degeneracy, 4 divergence, 5 property failure.

use gmnlab_core::ad::ParamError;
use gmnlab_core::model::ConfigError;
use gmnlab_core::sim::SimError;
use gmnlab_core::train::TrainError;

#[derive(Debug)]
pub struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError::new(2, message)
    }

    pub fn property(message: impl Into<String>) -> Self {
        CliError::new(5, message)
    }

    pub fn code(&self) -> i32 {
        self.code
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(1, format!("io: {e}"))
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let code = match &e {
            SimError::DegenerateArm { .. } => 3,
            SimError::InvalidSpec(_) => 2,
            SimError::Io(_) | SimError::Malformed { .. } => 1,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::new(4, e.to_string()),
            TrainError::Invalid(_) => CliError::new(2, e.to_string()),
            TrainError::Sim(inner) => inner.into(),
            TrainError::Io(_) | TrainError::Param(_) | TrainError::Config(_) => {
                CliError::new(1, e.to_string())
            }
        }
    }
}

impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        CliError::new(1, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(2, e.to_string())
    }
}
