//! Reference predictors: the training mean, and ordinary least squares on
//! per-patch band means.

use rayon::prelude::*;

use super::{EstimatorError, Result};
use crate::dataset::{DatasetManifest, Split};
use crate::patch::PatchProvider;
use crate::raster::N_BANDS;
use crate::table::PredictionRow;

fn rows_from(manifest: &DatasetManifest, preds: impl Iterator<Item = f64>) -> Vec<PredictionRow> {
    manifest
        .samples
        .iter()
        .zip(preds)
        .map(|(s, p)| PredictionRow {
            row: s.row,
            col: s.col,
            split: s.split,
            target_lg: s.target_lg,
            pred_lg: p,
        })
        .collect()
}

/// Predicts the mean training target for every sample.
pub fn baseline_mean(manifest: &DatasetManifest) -> Result<Vec<PredictionRow>> {
    let train: Vec<f64> = manifest.split(Split::Train).map(|s| s.target_lg).collect();
    if train.is_empty() {
        return Err(EstimatorError::EmptySplit("train"));
    }
    let mean = train.iter().sum::<f64>() / train.len() as f64;
    Ok(rows_from(manifest, std::iter::repeat(mean)))
}

#[derive(Debug, Clone)]
pub struct BandstatFit {
    /// Intercept followed by the R, G, B, NIR coefficients.
    pub coefficients: [f64; N_BANDS + 1],
    /// The normal equations were singular and a 1e-8 ridge was added.
    pub ridge_used: bool,
    pub rows: Vec<PredictionRow>,
}

const RIDGE: f64 = 1e-8;

/// Gaussian elimination with partial pivoting. `None` if a pivot vanishes.
fn solve(mut a: [[f64; N_BANDS + 1]; N_BANDS + 1], mut b: [f64; N_BANDS + 1]) -> Option<[f64; N_BANDS + 1]> {
    const N: usize = N_BANDS + 1;
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..N {
            let f = a[r][col] / a[col][col];
            for c in col..N {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for r in (0..N).rev() {
        let s: f64 = (r + 1..N).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// OLS of target on the four band means of each sample's patch, fitted on
/// the training split and applied to every sample.
pub fn baseline_bandstat<P: PatchProvider<f64>>(
    manifest: &DatasetManifest,
    provider: &P,
) -> Result<BandstatFit> {
    let features: Vec<[f64; N_BANDS + 1]> = manifest
        .samples
        .par_iter()
        .map(|s| {
            let p = provider.patch(s.cell())?;
            let m = p.channel_means();
            Ok([1.0, m[0], m[1], m[2], m[3]])
        })
        .collect::<Result<_>>()?;
    let mut xtx = [[0.0; N_BANDS + 1]; N_BANDS + 1];
    let mut xty = [0.0; N_BANDS + 1];
    let mut n_train = 0;
    for (s, f) in manifest.samples.iter().zip(&features) {
        if s.split != Split::Train {
            continue;
        }
        n_train += 1;
        for i in 0..=N_BANDS {
            xty[i] += f[i] * s.target_lg;
            for j in 0..=N_BANDS {
                xtx[i][j] += f[i] * f[j];
            }
        }
    }
    if n_train == 0 {
        return Err(EstimatorError::EmptySplit("train"));
    }
    let (coefficients, ridge_used) = match solve(xtx, xty) {
        Some(c) => (c, false),
        None => {
            let mut ridged = xtx;
            for (i, row) in ridged.iter_mut().enumerate() {
                row[i] += RIDGE;
            }
            let c = solve(ridged, xty).ok_or_else(|| {
                EstimatorError::Config("band-mean regression is degenerate even with ridge".into())
            })?;
            (c, true)
        }
    };
    let preds = features
        .iter()
        .map(|f| f.iter().zip(&coefficients).map(|(a, b)| a * b).sum());
    Ok(BandstatFit {
        coefficients,
        ridge_used,
        rows: rows_from(manifest, preds),
    })
}
