use placehash::dataset::DatasetError;
use placehash::eval::EvalError;
use placehash::featio::FormatError;
use placehash::gist::GistError;
use placehash::hashlearn::HashError;
use placehash::seqmatch::SeqError;
use thiserror::Error;

/// Two classes of failure, reported with distinct exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, manifest, or missing inputs.
    #[error("{0}")]
    Config(String),
    /// Inputs were found but their contents are unusable.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

pub fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn data(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::FeatureRows { .. } | DatasetError::FeatureDims { .. } => data(e.to_string()),
            _ => config(e.to_string()),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        data(e.to_string())
    }
}

impl From<GistError> for CliError {
    fn from(e: GistError) -> Self {
        match e {
            GistError::NotPowerOfTwo(_)
            | GistError::BadGrid { .. }
            | GistError::NoOrientations(_)
            | GistError::LengthMismatch { .. } => config(e.to_string()),
            _ => data(e.to_string()),
        }
    }
}

impl From<HashError> for CliError {
    fn from(e: HashError) -> Self {
        match e {
            HashError::EmptyCode | HashError::CodeTooLong { .. } | HashError::BadReg(_) | HashError::NoIterations => {
                config(e.to_string())
            }
            _ => data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Dataset(e) => e.into(),
            EvalError::Seq(e) => e.into(),
            e => data(e.to_string()),
        }
    }
}

impl From<SeqError> for CliError {
    fn from(e: SeqError) -> Self {
        match e {
            SeqError::BadGamma(_) => config(e.to_string()),
            _ => data(e.to_string()),
        }
    }
}
