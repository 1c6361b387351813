use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scenario field failed validation. `path` is a dotted field path
    /// such as `acs[1].cw_min` or `stations[3].traffic[0].rate_bps`.
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("failed to parse scenario document: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("failed to serialize scenario: {0}")]
    Serialize(#[from] toml::ser::Error),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid contention zone structure: {0}")]
    Zones(String),

    #[error("{0}")]
    Domain(String),

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }
}
