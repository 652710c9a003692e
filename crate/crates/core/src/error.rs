use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular configuration{}: {detail}", at_time(*.time))]
    SingularConfiguration { time: Option<f64>, detail: String },

    #[error("state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },

    #[error("grid too short: {needed} samples needed, {got} available")]
    GridTooShort { needed: usize, got: usize },

    #[error("degenerate signal for tracer {tracer}: variance {variance:e}")]
    DegenerateSignal { tracer: usize, variance: f64 },

    #[error("tracer {tracer} does not decorrelate below alpha = {alpha} within {max_lag} lags")]
    NoDecorrelation { tracer: usize, alpha: f64, max_lag: usize },

    #[error("partition interval too short: {0}")]
    IntervalTooShort(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("too many failed snapshot solves: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema error in {path} at row {row}: {detail}")]
    Schema { path: String, row: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn at_time(time: Option<f64>) -> String {
    match time {
        Some(t) => format!(" at t = {t}"),
        None => String::new(),
    }
}

impl Error {
    /// Stable, machine-readable name of the error kind.
    pub fn category(&self) -> &'static str {
        match self {
            Error::SingularConfiguration { .. } => "SingularConfiguration",
            Error::NonFiniteState { .. } => "NonFiniteState",
            Error::GridTooShort { .. } => "GridTooShort",
            Error::DegenerateSignal { .. } => "DegenerateSignal",
            Error::NoDecorrelation { .. } => "NoDecorrelation",
            Error::IntervalTooShort(_) => "IntervalTooShort",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::TooManyFailures { .. } => "TooManyFailures",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Schema { .. } => "SchemaError",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
        }
    }

    pub(crate) fn singular(detail: impl Into<String>) -> Self {
        Error::SingularConfiguration { time: None, detail: detail.into() }
    }

    pub(crate) fn with_time(self, t: f64) -> Self {
        match self {
            Error::SingularConfiguration { time: None, detail } => {
                Error::SingularConfiguration { time: Some(t), detail }
            }
            other => other,
        }
    }
}
