use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates one of its documented invariants.
    #[error("invalid {item}: {field} {reason}")]
    Invariant {
        item: &'static str,
        field: String,
        reason: String,
    },

    #[error("matrix is singular: {0}")]
    Singular(&'static str),

    #[error("degenerate fit: {0}")]
    DegenerateFit(&'static str),

    #[error("integration blew up at t = {t:.4} s ({context})")]
    IntegrationBlowup { t: f64, context: String },

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("failed to read config {path}: {source}")]
    ConfigIo {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse config: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("failed to serialize config: {0}")]
    ConfigSerialize(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn invariant(
        item: &'static str,
        field: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        Error::Invariant {
            item,
            field: field.into(),
            reason: reason.into(),
        }
    }
}
