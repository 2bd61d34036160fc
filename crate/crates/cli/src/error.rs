use std::fmt;

use tkg_rag::eval::EvalError;
use tkg_rag::llm::ClientError;

#[derive(Debug)]
pub enum CliError {
    /// A config value failed to parse or validate.
    Config { path: String, message: String },
    /// Bad input other than the config: dataset, rule bank, query set.
    Invalid(String),
    Runtime(String),
    /// The completion endpoint stayed unreachable.
    Transport(String),
}

impl CliError {
    pub fn config(path: &str, message: impl Into<String>) -> Self {
        let path = if path.is_empty() || path == "." { "<root>" } else { path };
        CliError::Config { path: path.to_owned(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Transport(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { path, message } => write!(f, "invalid config at `{path}`: {message}"),
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
            CliError::Transport(m) => write!(f, "{m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("I/O: {e}"))
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Transport { .. } => CliError::Transport(e.to_string()),
            ClientError::Config(m) => CliError::config("endpoint", m),
            ClientError::Malformed(_) | ClientError::Endpoint(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Predict { index, source } => match CliError::from(source) {
                CliError::Transport(m) => CliError::Transport(format!("query {index}: {m}")),
                CliError::Runtime(m) => CliError::Runtime(format!("query {index}: {m}")),
                other => other,
            },
            EvalError::Empty | EvalError::BadK | EvalError::MissingGold { .. } | EvalError::Config(_) => {
                CliError::Invalid(e.to_string())
            }
            EvalError::Journal { .. } | EvalError::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}
