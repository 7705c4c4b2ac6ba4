use serde::Serialize;

/// Machine-readable error record printed on failure.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub module: String,
    pub message: String,
}

pub type CliResult<T> = Result<T, Failure>;

impl Failure {
    pub fn cli(message: impl Into<String>) -> Self {
        Self { module: "cli".into(), message: message.into() }
    }
}

impl From<mepck::Error> for Failure {
    fn from(e: mepck::Error) -> Self {
        Self { module: e.module().into(), message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::cli(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::cli(e.to_string())
    }
}
