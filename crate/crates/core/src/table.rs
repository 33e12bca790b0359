//! Prediction table: one row per cell with its split, target and estimate.
//!
//! CSV header `row,col,split,target_lg,pred_lg`; reals carry nine
//! significant digits.

use std::path::Path;

use crate::dataset::Split;

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("prediction table: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const HEADER: [&str; 5] = ["row", "col", "split", "target_lg", "pred_lg"];

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub row: usize,
    pub col: usize,
    pub split: Split,
    pub target_lg: f64,
    pub pred_lg: f64,
}

/// Nine significant digits, shortest rendering.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let r: f64 = format!("{v:.8e}").parse().expect("scientific literal parses");
    format!("{r}")
}

pub fn write_predictions(rows: &[PredictionRow], path: impl AsRef<Path>) -> Result<(), TableError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.row.to_string(),
            r.col.to_string(),
            r.split.to_string(),
            sig9(r.target_lg),
            sig9(r.pred_lg),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>, TableError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(TableError::Format(format!("unexpected header {header:?}")));
    }
    let mut out = vec![];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or_default();
        let bad = |what: &str| TableError::Format(format!("data row {}: bad {what}", i + 1));
        out.push(PredictionRow {
            row: field(0).parse().map_err(|_| bad("row"))?,
            col: field(1).parse().map_err(|_| bad("col"))?,
            split: field(2).parse().map_err(|_| bad("split"))?,
            target_lg: field(3).parse().map_err(|_| bad("target_lg"))?,
            pred_lg: field(4).parse().map_err(|_| bad("pred_lg"))?,
        });
    }
    Ok(out)
}
