use serde::{Deserialize, Serialize};

use super::{EstimatorError, Result};
use crate::Scalar;

/// Logarithm base of the log-cosh loss. Base 10 is the default; the two
/// bases differ by the constant factor `ln 10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "10")]
    Ten,
    #[serde(rename = "e")]
    E,
}

impl LogBase {
    pub fn ln_base<T: Scalar>(self) -> T {
        match self {
            LogBase::Ten => T::LN_10(),
            LogBase::E => T::one(),
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "10" => Ok(LogBase::Ten),
            "e" | "E" => Ok(LogBase::E),
            other => Err(EstimatorError::Config(format!("unknown log base `{other}`"))),
        }
    }
}

impl std::fmt::Display for LogBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LogBase::Ten => "10",
            LogBase::E => "e",
        })
    }
}

/// Natural `ln(cosh d)` without overflow. Below |d| = 20 the identity
/// `cosh d − 1 = 2 sinh²(d/2)` keeps small residuals accurate; above it the
/// asymptotic form `|d| − ln 2 + ln(1 + e^(−2|d|))` is used.
pub fn log_cosh<T: Scalar>(d: T) -> T {
    let a = d.abs();
    if a > T::of(20.0) {
        a - T::LN_2() + (-(a + a)).exp().ln_1p()
    } else {
        let s = (a / T::of(2.0)).sinh();
        (T::of(2.0) * s * s).ln_1p()
    }
}

/// The loss as a reusable value: base plus batch reduction (sum).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LogCosh {
    pub base: LogBase,
}

impl LogCosh {
    pub fn new(base: LogBase) -> Self {
        Self { base }
    }

    pub fn loss<T: Scalar>(&self, pred: &[T], truth: &[T]) -> Result<T> {
        check(pred, truth)?;
        let ln_b = self.base.ln_base::<T>();
        Ok(pred
            .iter()
            .zip(truth)
            .map(|(&p, &t)| log_cosh(p - t))
            .sum::<T>()
            / ln_b)
    }

    /// `∂L/∂pred_i = tanh(pred_i − truth_i) / ln(base)`.
    pub fn gradient<T: Scalar>(&self, pred: &[T], truth: &[T]) -> Result<Vec<T>> {
        check(pred, truth)?;
        let ln_b = self.base.ln_base::<T>();
        Ok(pred
            .iter()
            .zip(truth)
            .map(|(&p, &t)| (p - t).tanh() / ln_b)
            .collect())
    }
}

fn check<T>(pred: &[T], truth: &[T]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(EstimatorError::Shape(format!(
            "{} predictions vs {} targets",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// `Σ log10(cosh(pred_i − truth_i))`.
pub fn log_cosh_loss<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T> {
    LogCosh::new(LogBase::Ten).loss(pred, truth)
}

/// Base-10 loss gradient with respect to the predictions.
pub fn loss_gradient<T: Scalar>(pred: &[T], truth: &[T]) -> Result<Vec<T>> {
    LogCosh::new(LogBase::Ten).gradient(pred, truth)
}
