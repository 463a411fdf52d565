use af_core::corpus::CorpusError;
use af_core::export::ExportError;
use af_core::gateway::GatewayError;
use af_core::harness::HarnessError;
use af_core::jsonl::JsonlError;
use af_core::perturb::PerturbError;
use af_core::pope::PopeError;
use af_core::prompts::TemplateError;
use af_core::qagen::QagenError;
use af_core::review::ReviewError;
use serde_json::Value;
use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub struct CliError {
    message: String,
    external: bool,
    summary: Option<Value>,
}

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            external: false,
            summary: None,
        }
    }

    pub fn external(message: impl Into<String>) -> Self {
        CliError {
            external: true,
            ..CliError::invalid(message)
        }
    }

    fn classify(message: String, external: bool) -> Self {
        if external {
            CliError::external(message)
        } else {
            CliError::invalid(message)
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::invalid(format!("{}: {e}", path.display()))
    }

    pub fn with_summary(mut self, summary: Value) -> Self {
        self.summary = Some(summary);
        self
    }

    pub fn summary(&self) -> Option<&Value> {
        self.summary.as_ref()
    }

    pub fn code(&self) -> u8 {
        if self.external {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        let ext = e.is_external();
        CliError::classify(e.to_string(), ext)
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let ext = e.is_external();
        CliError::classify(e.to_string(), ext)
    }
}

impl From<PopeError> for CliError {
    fn from(e: PopeError) -> Self {
        let ext = e.is_external();
        CliError::classify(e.to_string(), ext)
    }
}

impl From<QagenError> for CliError {
    fn from(e: QagenError) -> Self {
        let ext = matches!(&e, QagenError::Gateway(g) if g.is_external());
        CliError::classify(e.to_string(), ext)
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::invalid(e.to_string())
            }
        }
    )*};
}

invalid_from!(
    CorpusError,
    ExportError,
    JsonlError,
    PerturbError,
    TemplateError,
    ReviewError
);
