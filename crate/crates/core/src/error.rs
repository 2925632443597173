use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing column `{column}` in {path}")]
    MissingColumn { column: String, path: PathBuf },

    #[error("data error in {path} at row {row}: {message}")]
    Data {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Dataset(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("feature column `{0}` is constant on the training set")]
    ConstantFeature(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("R² undefined: actual values have zero variance")]
    UndefinedR2,

    #[error("model file: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// True for errors caused by the input data rather than configuration.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::MissingColumn { .. }
            | Error::Data { .. }
            | Error::Dataset(_)
            | Error::Csv(_)
            | Error::Io(_)
            | Error::ConstantFeature(_) => true,
            Error::AtStep { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} is not finite ({value})")))
    }
}
