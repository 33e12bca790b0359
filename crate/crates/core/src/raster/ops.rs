use super::{GeoGrid, GridHeader, RasterError, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateMode {
    /// Block total; nodata counts as zero. Use for population counts.
    Sum,
    /// Block mean over valid cells; an all-nodata block stays nodata.
    Mean,
}

/// Coarsen `grid` by `factor` in both directions.
pub fn aggregate_blocks<T: Scalar>(
    grid: &GeoGrid<T>,
    factor: usize,
    mode: AggregateMode,
) -> Result<GeoGrid<T>> {
    let h = grid.header();
    if factor == 0 || !h.n_rows.is_multiple_of(factor) || !h.n_cols.is_multiple_of(factor) {
        return Err(RasterError::Dimension(format!(
            "factor {factor} does not divide {}x{}",
            h.n_rows, h.n_cols
        )));
    }
    let out_h = GridHeader {
        n_rows: h.n_rows / factor,
        n_cols: h.n_cols / factor,
        cell_size: h.cell_size * factor as f64,
        ..*h
    };
    let nodata = T::of(h.nodata_value);
    let mut out = Vec::with_capacity(out_h.len());
    for br in 0..out_h.n_rows {
        for bc in 0..out_h.n_cols {
            let mut acc = T::zero();
            let mut valid = 0usize;
            for r in br * factor..(br + 1) * factor {
                for c in bc * factor..(bc + 1) * factor {
                    let v = grid.get(r, c);
                    if !grid.is_nodata(v) {
                        acc += v;
                        valid += 1;
                    }
                }
            }
            out.push(match mode {
                AggregateMode::Sum => acc,
                AggregateMode::Mean if valid == 0 => nodata,
                AggregateMode::Mean => acc / T::of_usize(valid),
            });
        }
    }
    GeoGrid::new(out_h, out)
}

/// 24-hour ambient count from co-registered daytime and nighttime grids:
/// the day/night mean where it reaches one person, zero elsewhere.
/// Nodata inputs count as zero; the output carries no nodata.
pub fn combine_ambient<T: Scalar>(day: &GeoGrid<T>, night: &GeoGrid<T>) -> Result<GeoGrid<T>> {
    day.header().check_coregistered(night.header())?;
    let two = T::of(2.0);
    let values = (0..day.header().len())
        .map(|i| {
            let (r, c) = (i / day.n_cols(), i % day.n_cols());
            let mean = (day.count_at(r, c) + night.count_at(r, c)) / two;
            if mean >= T::one() {
                mean
            } else {
                T::zero()
            }
        })
        .collect();
    GeoGrid::new(*day.header(), values)
}
