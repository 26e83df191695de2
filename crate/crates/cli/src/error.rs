use kbtqa_core::app::AppError;
use kbtqa_core::corpus::CorpusError;
use kbtqa_core::dataset::DatasetError;
use kbtqa_core::eval::EvalError;
use kbtqa_core::kb::KbError;
use kbtqa_core::retrieve::{ProviderError, RetrieveError};
use kbtqa_core::train::TrainError;
use serde_json::json;

/// Error reported by a command: a stable `kind` plus a human message.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind}: {message}")]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    /// `{"error":{"kind":..,"message":..}}`
    pub fn to_json(&self) -> String {
        json!({"error": {"kind": self.kind, "message": self.message}}).to_string()
    }
}

macro_rules! kind {
    ($($t:ty => $k:expr),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new($k, e.to_string())
            }
        })*
    };
}

kind! {
    CorpusError => "input",
    KbError => "input",
    DatasetError => "dataset",
    TrainError => "train",
    EvalError => "eval",
    ProviderError => "provider",
    std::io::Error => "io",
    serde_json::Error => "input",
}

impl From<RetrieveError> for CliError {
    fn from(e: RetrieveError) -> Self {
        let kind = match e {
            RetrieveError::UnknownTable(_) => "unknown_table",
            _ => "retrieve",
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<AppError> for CliError {
    fn from(e: AppError) -> Self {
        let kind = match &e {
            AppError::Generation { .. } => "generation",
            AppError::UnknownTable { .. } => "unknown_table",
            AppError::Retrieve(RetrieveError::UnknownTable(_)) => "unknown_table",
            AppError::Provider(_) => "provider",
            AppError::Retrieve(_) => "retrieve",
            _ => "app",
        };
        CliError::new(kind, e.to_string())
    }
}
