use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown moderator `{name}` (available: {})", available.join(", "))]
    UnknownModerator {
        name: String,
        available: Vec<String>,
    },

    #[error("column `{name}` not found; available columns: {}", available.join(", "))]
    MissingColumn {
        name: String,
        available: Vec<String>,
    },

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("no studies remain after complete-case filtering")]
    NoStudies,

    #[error("study {study}: events ({events}) exceed total ({total})")]
    EventsExceedTotal {
        study: String,
        events: u64,
        total: u64,
    },

    #[error("insufficient studies: k = {k} but the model has p = {p} coefficients (need k > p)")]
    InsufficientStudies { k: usize, p: usize },

    #[error("singular design: columns {} are (nearly) collinear, condition estimate {condition:.3e}", columns.join(", "))]
    SingularDesign {
        columns: Vec<String>,
        condition: f64,
    },

    #[error("REML did not converge after {iterations} iterations (last tau2 = {last_tau2})")]
    NonConvergence { iterations: usize, last_tau2: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnknownModerator { .. }
            | Error::MissingColumn { .. }
            | Error::InvalidSpec(_)
            | Error::Config(_) => 1,
            Error::NoStudies
            | Error::EventsExceedTotal { .. }
            | Error::InvalidInput(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::InsufficientStudies { .. }
            | Error::SingularDesign { .. }
            | Error::NonConvergence { .. } => 3,
        }
    }
}
