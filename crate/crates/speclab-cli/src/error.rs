//! One error type for the whole binary, sorted into the three failure
//! classes the exit codes distinguish: bad invocations, bad data, and
//! numerically degenerate results.

use std::fmt;
use std::io;

use speclab::distill::DistillError;
use speclab::spectral::SpectralError;
use speclab::tensor::TensorError;
use speclab::tinyvit::model::TinyVitError;
use speclab::tinyvit::train::TrainError;

/// Exit code for bad flags, arguments, or config contents.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for unreadable, malformed, or inconsistent input data.
pub const EXIT_DATA: i32 = 3;
/// Exit code for results that exist but are numerically meaningless.
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    /// The invocation itself is wrong: flag values, config schema, plan
    /// parameters. Fixable by editing the command line or the config file.
    Usage(String),
    /// Input files are missing, unreadable, or internally inconsistent.
    Data(String),
    /// Inputs parsed fine but the computation degenerates (zero profiles,
    /// non-finite losses).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Data(_) => EXIT_DATA,
            Self::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(why) => write!(f, "usage error: {why}"),
            Self::Data(why) => write!(f, "data error: {why}"),
            Self::Numeric(why) => write!(f, "numeric failure: {why}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::Data(format!("io: {e}"))
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        match e {
            SpectralError::KOutOfRange { .. } | SpectralError::BudgetExceeded { .. } => {
                Self::Usage(e.to_string())
            }
            SpectralError::EmptyProfile => Self::Data(e.to_string()),
            SpectralError::ZeroProfile => Self::Numeric(e.to_string()),
        }
    }
}

impl From<DistillError> for CliError {
    fn from(e: DistillError) -> Self {
        match e {
            DistillError::BadConfig(_) => Self::Usage(e.to_string()),
            DistillError::SpatialMismatch(_) | DistillError::LabelOutOfRange { .. } => {
                Self::Data(e.to_string())
            }
        }
    }
}

impl From<TinyVitError> for CliError {
    fn from(e: TinyVitError) -> Self {
        match e {
            TinyVitError::BadConfig(_) => Self::Usage(e.to_string()),
            TinyVitError::Tensor(t) => t.into(),
            TinyVitError::ShapeMismatch(_) | TinyVitError::Manifest(_) => {
                Self::Data(e.to_string())
            }
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Loss(l) => l.into(),
            // Both cover mismatches between config numbers (batch vs count,
            // layer indices vs depth), which the user fixes in the config.
            TrainError::BadData(_) | TrainError::BadPlan(_) => Self::Usage(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_map_to_distinct_exit_codes() {
        assert_eq!(CliError::Usage(String::new()).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::Data(String::new()).exit_code(), EXIT_DATA);
        assert_eq!(CliError::Numeric(String::new()).exit_code(), EXIT_NUMERIC);
    }

    #[test]
    fn spectral_errors_split_by_class() {
        let usage: CliError = SpectralError::KOutOfRange { k: 9, layers: 4 }.into();
        assert!(matches!(usage, CliError::Usage(_)));
        let numeric: CliError = SpectralError::ZeroProfile.into();
        assert!(matches!(numeric, CliError::Numeric(_)));
        let data: CliError = SpectralError::EmptyProfile.into();
        assert!(matches!(data, CliError::Data(_)));
    }

    #[test]
    fn nested_training_errors_unwrap_to_their_cause() {
        let e = TrainError::Model(TinyVitError::BadConfig("depth must be >= 1".into()));
        let cli: CliError = e.into();
        assert!(matches!(cli, CliError::Usage(_)));
        assert!(cli.to_string().contains("depth"));
    }
}
