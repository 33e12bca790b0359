use serde::Serialize;

use super::{check_pair, EvalError, Result};
use crate::Scalar;

/// Running means and centered co-moments of (truth, pred), plus the
/// squared-error sum, gathered in a single pass (Welford updates).
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments<T> {
    pub n: usize,
    pub mean_truth: T,
    pub mean_pred: T,
    /// Σ (t − t̄)²
    pub ss_truth: T,
    /// Σ (p − p̄)²
    pub ss_pred: T,
    /// Σ (t − t̄)(p − p̄)
    pub co: T,
    /// Σ (t − p)²
    pub sse: T,
}

impl<T: Scalar> Moments<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, truth: T, pred: T) {
        self.n += 1;
        let n = T::of_usize(self.n);
        let dt = truth - self.mean_truth;
        let dp = pred - self.mean_pred;
        self.mean_truth += dt / n;
        self.mean_pred += dp / n;
        self.ss_truth += dt * (truth - self.mean_truth);
        self.ss_pred += dp * (pred - self.mean_pred);
        self.co += dt * (pred - self.mean_pred);
        let e = truth - pred;
        self.sse += e * e;
    }

    pub fn from_pairs(truth: &[T], pred: &[T]) -> Self {
        let mut m = Self::new();
        for (&t, &p) in truth.iter().zip(pred) {
            m.push(t, p);
        }
        m
    }

    pub fn squared_pearson(&self) -> Result<T> {
        if self.ss_truth == T::zero() || self.ss_pred == T::zero() {
            return Err(EvalError::Undefined("R² needs variance in truth and prediction"));
        }
        let r2 = self.co * self.co / (self.ss_truth * self.ss_pred);
        Ok(r2.min(T::one()))
    }

    pub fn efficiency(&self) -> Result<T> {
        if self.ss_truth == T::zero() {
            return Err(EvalError::Undefined("CoE needs variance in truth"));
        }
        Ok(T::one() - self.sse / self.ss_truth)
    }
}

/// How `r_squared` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RSquaredDefinition {
    /// Squared Pearson correlation of truth and prediction.
    #[default]
    SquaredPearson,
    /// `1 − SSE/SST`, identical to the efficiency coefficient.
    Efficiency,
}

/// Nash-Sutcliffe coefficient of efficiency, `1 − Σ(t−p)² / Σ(t−t̄)²`.
pub fn coe<T: Scalar>(truth: &[T], pred: &[T]) -> Result<T> {
    check_pair(truth, pred, 2)?;
    Moments::from_pairs(truth, pred).efficiency()
}

/// Squared Pearson correlation between truth and prediction.
pub fn r_squared<T: Scalar>(truth: &[T], pred: &[T]) -> Result<T> {
    check_pair(truth, pred, 2)?;
    Moments::from_pairs(truth, pred).squared_pearson()
}

/// Modified index of agreement,
/// `1 − Σ|t−p| / Σ(|p−t̄| + |t−t̄|)`. Returns 1 when the denominator vanishes
/// (every value equal to the truth mean).
pub fn mioa<T: Scalar>(truth: &[T], pred: &[T]) -> Result<T> {
    check_pair(truth, pred, 1)?;
    let mean = truth.iter().copied().sum::<T>() / T::of_usize(truth.len());
    let mut num = T::zero();
    let mut den = T::zero();
    for (&t, &p) in truth.iter().zip(pred) {
        num += (t - p).abs();
        den += (p - mean).abs() + (t - mean).abs();
    }
    if den == T::zero() {
        return Ok(T::one());
    }
    Ok((T::one() - num / den).max(T::zero()).min(T::one()))
}

/// Agreement metrics for one evaluation. `None` marks a metric that is
/// undefined for the data (zero variance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport<T> {
    pub r_squared: Option<T>,
    pub coe: Option<T>,
    pub mioa: T,
    pub m: usize,
    pub mean_truth: T,
}

impl<T: Scalar> MetricsReport<T> {
    pub fn compute(truth: &[T], pred: &[T], def: RSquaredDefinition) -> Result<Self> {
        check_pair(truth, pred, 1)?;
        let mo = Moments::from_pairs(truth, pred);
        let r_squared = match def {
            RSquaredDefinition::SquaredPearson => mo.squared_pearson().ok(),
            RSquaredDefinition::Efficiency => mo.efficiency().ok(),
        };
        Ok(Self {
            r_squared: if truth.len() >= 2 { r_squared } else { None },
            coe: if truth.len() >= 2 { mo.efficiency().ok() } else { None },
            mioa: mioa(truth, pred)?,
            m: truth.len(),
            mean_truth: mo.mean_truth,
        })
    }
}
