use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("active boundary marking failed: {0}")]
    Marking(String),
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("factorisation failed: {message} (condition estimate {condition:e})")]
    Factorization { message: String, condition: f64 },
    #[error(
        "linear solve did not reach tolerance: relative residual {residual:e} > {tolerance:e}"
    )]
    Solve { residual: f64, tolerance: f64 },
    #[error("non-finite state at t = {t}")]
    Divergence { t: f64 },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("config error at line {line}: key `{key}`: {message}")]
    Config {
        key: String,
        line: usize,
        message: String,
    },
    #[error("Gårding estimate failed: {0}")]
    Estimate(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Config { .. } | Error::Parameter(_) | Error::Unsupported(_) => 3,
            Error::Io(_) | Error::Csv(_) => 5,
            Error::Context { source, .. } => source.exit_code(),
            _ => 4,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
