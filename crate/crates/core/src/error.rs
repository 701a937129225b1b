use thiserror::Error;

/// Errors raised by the simulator, learner, and harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its invariant. `key` names the offending field.
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// Non-finite plant input or output; the episode is aborted as failed.
    #[error("numeric blow-up at t={t}: {what}")]
    NumericBlowUp { t: f64, what: &'static str },

    /// Scaling factor outside the paradigm's action range.
    #[error("scaling factor {m} outside [{lo}, {hi}] for {paradigm}")]
    ActionOutOfRange {
        m: f64,
        lo: f64,
        hi: f64,
        paradigm: &'static str,
    },

    #[error("state-action pair ({e_bin}, {edot_bin}, a={action}) has never been observed")]
    Unobserved {
        e_bin: usize,
        edot_bin: usize,
        action: usize,
    },

    #[error("degenerate step: {0}")]
    DegenerateStep(String),

    #[error("no policy archive for paradigm {0}")]
    MissingParadigm(&'static str),

    /// Policy archive or exported grid could not be parsed.
    #[error("{path}: line {line}: {reason}")]
    Format {
        path: String,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that stem from user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Format { .. } | Error::MissingParadigm(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
