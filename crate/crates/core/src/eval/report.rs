use std::path::Path;

use serde::Serialize;

use super::{bias_fit, BiasReport, EvalError, MetricsReport, RSquaredDefinition, Result};
use crate::dataset::Split;
use crate::table::{sig9, PredictionRow};

/// Metrics and bias statistics for one filtered prediction table.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricsReport<f64>,
    /// `None` when fewer than three rows are available or truth is constant.
    pub bias: Option<BiasReport>,
    pub truth: Vec<f64>,
    pub pred: Vec<f64>,
}

#[derive(Serialize)]
struct BiasJson {
    alpha: Option<f64>,
    beta: Option<f64>,
    pearson_r: Option<f64>,
    p_value: Option<f64>,
}

#[derive(Serialize)]
struct ReportJson {
    m: usize,
    r_squared: Option<f64>,
    coe: Option<f64>,
    mioa: Option<f64>,
    bias: BiasJson,
}

impl Evaluation {
    /// `{m, r_squared, coe, mioa, bias: {alpha, beta, pearson_r, p_value}}`,
    /// `null` for anything not applicable.
    pub fn to_json(&self) -> serde_json::Value {
        let b = self.bias.as_ref();
        serde_json::to_value(ReportJson {
            m: self.metrics.m,
            r_squared: self.metrics.r_squared,
            coe: self.metrics.coe,
            mioa: Some(self.metrics.mioa),
            bias: BiasJson {
                alpha: b.map(|b| b.alpha),
                beta: b.map(|b| b.beta),
                pearson_r: b.and_then(|b| b.pearson_r),
                p_value: b.and_then(|b| b.p_value),
            },
        })
        .expect("report serializes")
    }
}

pub fn evaluate_all(
    rows: &[PredictionRow],
    split: Option<Split>,
    def: RSquaredDefinition,
) -> Result<Evaluation> {
    let (truth, pred): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .map(|r| (r.target_lg, r.pred_lg))
        .unzip();
    if truth.is_empty() {
        return Err(EvalError::EmptySplit(
            split.map_or("all".to_string(), |s| s.to_string()),
        ));
    }
    let metrics = MetricsReport::compute(&truth, &pred, def)?;
    let bias = bias_fit(&truth, &pred).ok();
    Ok(Evaluation {
        metrics,
        bias,
        truth,
        pred,
    })
}

/// Writes `truth_lg,pred_lg` and `truth_lg,residual_lg` pair files.
pub fn write_scatter_csvs(
    eval: &Evaluation,
    pred_path: impl AsRef<Path>,
    resid_path: impl AsRef<Path>,
) -> Result<()> {
    let mut a = csv::Writer::from_path(pred_path)?;
    let mut b = csv::Writer::from_path(resid_path)?;
    a.write_record(["truth_lg", "pred_lg"])?;
    b.write_record(["truth_lg", "residual_lg"])?;
    for (&t, &p) in eval.truth.iter().zip(&eval.pred) {
        a.write_record([sig9(t), sig9(p)])?;
        b.write_record([sig9(t), sig9(p - t)])?;
    }
    a.flush()?;
    b.flush()?;
    Ok(())
}
