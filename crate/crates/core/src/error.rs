use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("integration error: {0}")]
    Integration(String),

    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),

    #[error("unsupported format version: {0}")]
    Version(String),

    #[error("undefined metric for component {component}: truth has zero norm (absolute RMSE {rmse})")]
    UndefinedMetric { component: usize, rmse: f64 },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            actual,
        })
    }
}

pub(crate) fn check_finite(context: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite(format!("{context}[{i}] = {}", values[i]))),
    }
}
