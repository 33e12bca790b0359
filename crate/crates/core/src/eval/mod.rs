//! Agreement metrics between log targets and estimates, and the residual
//! bias diagnostics: OLS of residual on truth with a Student-t test of the
//! residual/truth correlation.

mod bias;
mod metrics;
mod report;
mod stats;

pub use bias::{bias_fit, BiasReport};
pub use metrics::{coe, mioa, r_squared, Moments, MetricsReport, RSquaredDefinition};
pub use report::{evaluate_all, write_scatter_csvs, Evaluation};
pub use stats::{ln_gamma, regularized_incomplete_beta, student_t_p};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {0} truth values, {1} predictions")]
    Length(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("no rows in split `{0}`")]
    EmptySplit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

pub(crate) fn check_pair<T>(truth: &[T], pred: &[T], need: usize) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(EvalError::Length(truth.len(), pred.len()));
    }
    if truth.len() < need {
        return Err(EvalError::TooFew {
            need,
            got: truth.len(),
        });
    }
    Ok(())
}
