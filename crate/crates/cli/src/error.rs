use gradrecon::io::IoError;
use gradrecon::metrics::MetricsError;
use gradrecon::models::ModelError;
use gradrecon::projector::ProjectError;
use gradrecon::synth::SynthError;
use gradrecon::trainer::TrainError;
use std::fmt;

/// A failed command: the `kind` tag of its error line and its exit code.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { kind: "usage", message: message.into() }
    }

    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        if self.kind == "usage" {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for CliError {
    /// `error: kind=<kind> message=<message on one line>`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.message.replace(['\n', '\r'], " ");
        write!(f, "error: kind={} message={}", self.kind, msg.trim())
    }
}

macro_rules! error_kind {
    ($($t:ty => $kind:literal),+ $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new($kind, e.to_string())
            }
        })+
    };
}

error_kind! {
    IoError => "io",
    std::io::Error => "io",
    csv::Error => "io",
    serde_json::Error => "io",
    ModelError => "model",
    TrainError => "train",
    ProjectError => "project",
    MetricsError => "metrics",
    SynthError => "data",
}

pub type CliResult<T> = Result<T, CliError>;
