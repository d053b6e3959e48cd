//! Model configuration shared by training, evaluation, and checkpoints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown model kind {0:?}")]
    UnknownKind(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Gmn,
    /// GMN with the learnable forward-kinematics variant.
    GmnLearnable,
    Egnn,
    /// EGNN trained with the constraint-regularized loss.
    EgnnReg,
    /// Closed-form `x + alpha * v` baseline.
    Linear,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gmn => "gmn",
            ModelKind::GmnLearnable => "gmn-l",
            ModelKind::Egnn => "egnn",
            ModelKind::EgnnReg => "egnn-reg",
            ModelKind::Linear => "linear",
        }
    }

    /// Whether predictions come from the neural forward pass (everything but
    /// the linear baseline).
    pub fn is_neural(self) -> bool {
        self != ModelKind::Linear
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Ok(match s {
            "gmn" => ModelKind::Gmn,
            "gmn-l" => ModelKind::GmnLearnable,
            "egnn" => ModelKind::Egnn,
            "egnn-reg" => ModelKind::EgnnReg,
            "linear" => ModelKind::Linear,
            other => return Err(ConfigError::UnknownKind(other.into())),
        })
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Input set of the stick acceleration head: just the member forces, or the
/// full (force, relative position, relative velocity) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StickPhi2 {
    ForceOnly,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub layers: usize,
    pub hidden: usize,
    pub stick_phi2: StickPhi2,
    /// Share one acceleration head across sticks and hinges (both then use
    /// the `stick_phi2` input form).
    pub shared_phi2: bool,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig { kind, layers: 4, hidden: 64, stick_phi2: StickPhi2::ForceOnly, shared_phi2: false }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.layers == 0 {
            return Err(ConfigError::Invalid("layers must be >= 1".into()));
        }
        if self.hidden == 0 {
            return Err(ConfigError::Invalid("hidden width must be >= 1".into()));
        }
        Ok(())
    }
}
