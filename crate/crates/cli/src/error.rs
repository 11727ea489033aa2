use std::fmt;

use occode::analysis::AnalysisError;
use occode::calibrate::CalibrateError;
use occode::hisco::HiscoError;
use occode::ingest::IngestError;
use occode::nn::ModelError;

/// Failure class, mapped one-to-one onto the exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numeric,
    Annotation,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Data => 3,
            Category::Numeric => 4,
            Category::Annotation => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Data => "data",
            Category::Numeric => "numeric",
            Category::Annotation => "annotation",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        Self { category, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Category::Config, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(Category::Data, message)
    }

    /// Prefixes the message with where it happened, keeping the category.
    pub fn context(self, what: impl fmt::Display) -> Self {
        Self { category: self.category, message: format!("{what}: {}", self.message) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error category={} message={}", self.category.as_str(), self.message)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<HiscoError> for CliError {
    fn from(e: HiscoError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let cat = match e {
            IngestError::InvalidSplit(_) | IngestError::MissingAndWord(_) => Category::Config,
            _ => Category::Data,
        };
        Self::new(cat, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let cat = match e {
            ModelError::InvalidConfig(_) | ModelError::ThresholdOutOfRange(_) => Category::Config,
            ModelError::NonFiniteLoss { .. } | ModelError::ShapeMismatch(_) => Category::Numeric,
            _ => Category::Data,
        };
        Self::new(cat, e.to_string())
    }
}

impl From<CalibrateError> for CliError {
    fn from(e: CalibrateError) -> Self {
        match e {
            CalibrateError::Model(m) => m.into(),
            CalibrateError::NoPredictions | CalibrateError::AllUndefined => Self::new(Category::Numeric, e.to_string()),
            CalibrateError::UnknownMetric(_) => Self::config(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Model(m) => m.into(),
            AnalysisError::UnannotatedRows(_) => Self::new(Category::Annotation, e.to_string()),
            AnalysisError::SampleTooLarge { .. } | AnalysisError::ThresholdOutOfRange(_) => Self::config(e.to_string()),
            AnalysisError::Regression(_) | AnalysisError::InsufficientPoints { .. } => {
                Self::new(Category::Numeric, e.to_string())
            }
            _ => Self::data(e.to_string()),
        }
    }
}
