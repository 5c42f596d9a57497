use misinfo_core::analysis::AnalysisError;
use misinfo_core::domain::DataError;
use misinfo_core::eval::EvalError;
use misinfo_core::judge::JudgeError;
use misinfo_core::optimizer::OptimizerError;
use misinfo_core::prompts::PromptError;
use misinfo_core::provider::ProviderError;
use misinfo_core::tasks::TaskError;
use serde::Serialize;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_PROVIDER: u8 = 3;

/// A command failure with its exit code, printed to stderr as JSON.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            kind: "data",
            message: message.into(),
        }
    }

    pub fn provider(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_PROVIDER,
            kind: "provider",
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&serde_json::json!({ "error": self })).expect("failure serializes")
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<PromptError> for Failure {
    fn from(e: PromptError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<TaskError> for Failure {
    fn from(e: TaskError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<ProviderError> for Failure {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::InvalidRequest(_) => Failure::data(e.to_string()),
            _ => Failure::provider(e.to_string()),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Provider(p) => p.into(),
            other => Failure::data(other.to_string()),
        }
    }
}

impl From<JudgeError> for Failure {
    fn from(e: JudgeError) -> Self {
        match e {
            JudgeError::Provider(p) => p.into(),
            other => Failure::data(other.to_string()),
        }
    }
}

impl From<OptimizerError> for Failure {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::Provider(p) => p.into(),
            OptimizerError::Judge(j) => j.into(),
            other => Failure::data(other.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Judge(j) => j.into(),
            EvalError::Optimizer(o) => o.into(),
            EvalError::Task(t) => t.into(),
            EvalError::Data(d) => d.into(),
            other => Failure::data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e.to_string())
    }
}
