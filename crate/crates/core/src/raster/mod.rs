//! Geo-referenced lattices, raster file IO and the grid arithmetic that
//! feeds the dataset: block aggregation and the day/night ambient combine.
//!
//! Geodesy is flat. Cells are addressed by `(row, col)` with row 0 at the
//! northern edge; no projection math happens anywhere in the crate.

mod ascii;
mod bgrd;
mod ops;

pub use ascii::{format_value, read_ascii_grid, write_ascii_grid};
pub use bgrd::{read_bandstack, write_bandstack, BGRD_MAGIC, BGRD_VERSION};
pub use ops::{aggregate_blocks, combine_ambient, AggregateMode};

use std::path::PathBuf;

use crate::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid grid header: {0}")]
    Header(String),
    #[error("not a BGRD file: {0}")]
    Format(String),
    #[error("unsupported band stack: {0} bands (expected 4)")]
    UnsupportedStack(u32),
    #[error("grids are not co-registered: {0}")]
    CoRegistration(String),
    #[error("non-finite band value at band {band}, index {index}")]
    NonFinite { band: usize, index: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RasterError>;

/// Lattice geometry. `cell_size` is in arc-seconds and the origin is the
/// upper-left corner in degrees.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridHeader {
    pub n_rows: usize,
    pub n_cols: usize,
    pub cell_size: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub nodata_value: f64,
}

impl GridHeader {
    pub fn new(n_rows: usize, n_cols: usize, cell_size: f64) -> Result<Self> {
        let h = Self {
            n_rows,
            n_cols,
            cell_size,
            origin_lat: 0.0,
            origin_lon: 0.0,
            nodata_value: -9999.0,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn with_origin(mut self, lat: f64, lon: f64) -> Self {
        self.origin_lat = lat;
        self.origin_lon = lon;
        self
    }

    pub fn with_nodata(mut self, nodata: f64) -> Self {
        self.nodata_value = nodata;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(RasterError::Header(format!(
                "empty lattice {}x{}",
                self.n_rows, self.n_cols
            )));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(RasterError::Header(format!(
                "cell size must be positive, got {}",
                self.cell_size
            )));
        }
        if !(self.origin_lat.is_finite() && self.origin_lon.is_finite()) {
            return Err(RasterError::Header("non-finite origin".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n_cols + col
    }

    /// Same lattice footprint, ignoring the nodata sentinel.
    pub fn same_geometry(&self, other: &GridHeader) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.cell_size == other.cell_size
            && self.origin_lat == other.origin_lat
            && self.origin_lon == other.origin_lon
    }

    /// Two grids are co-registered iff their headers match field for field.
    pub fn check_coregistered(&self, other: &GridHeader) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(RasterError::CoRegistration(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Single-band grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoGrid<T> {
    header: GridHeader,
    values: Vec<T>,
}

impl<T: Scalar> GeoGrid<T> {
    pub fn new(header: GridHeader, values: Vec<T>) -> Result<Self> {
        header.validate()?;
        if values.len() != header.len() {
            return Err(RasterError::Dimension(format!(
                "{} values for a {}x{} grid",
                values.len(),
                header.n_rows,
                header.n_cols
            )));
        }
        Ok(Self { header, values })
    }

    pub fn filled(header: GridHeader, value: T) -> Result<Self> {
        Self::new(header, vec![value; header.len()])
    }

    pub fn header(&self) -> &GridHeader {
        &self.header
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn n_rows(&self) -> usize {
        self.header.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.header.n_cols
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[self.header.index(row, col)]
    }

    pub fn is_nodata(&self, v: T) -> bool {
        v.as_f64() == self.header.nodata_value
    }

    /// Value with nodata mapped to zero, the convention for population counts.
    pub fn count_at(&self, row: usize, col: usize) -> T {
        let v = self.get(row, col);
        if self.is_nodata(v) {
            T::zero()
        } else {
            v
        }
    }

    /// Sum of all values, nodata counted as zero.
    pub fn total(&self) -> T {
        self.values
            .iter()
            .filter(|v| !self.is_nodata(**v))
            .copied()
            .sum()
    }

    /// Checks the population-grid invariant: every non-nodata value is
    /// finite and non-negative.
    pub fn check_population(&self) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            if self.is_nodata(v) {
                continue;
            }
            if !v.is_finite() || v < T::zero() {
                return Err(RasterError::Dimension(format!(
                    "population value {v} at index {i} is negative or non-finite"
                )));
            }
        }
        Ok(())
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> GeoGrid<U> {
        GeoGrid {
            header: self.header,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Band order inside a [`BandStack`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Red = 0,
    Green = 1,
    Blue = 2,
    Nir = 3,
}

pub const N_BANDS: usize = 4;

/// Four co-registered reflectance bands (R, G, B, NIR). The header's
/// `cell_size` is the pixel size in arc-seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStack {
    header: GridHeader,
    bands: [Vec<f32>; N_BANDS],
}

impl BandStack {
    pub fn new(header: GridHeader, bands: [Vec<f32>; N_BANDS]) -> Result<Self> {
        header.validate()?;
        for (b, band) in bands.iter().enumerate() {
            if band.len() != header.len() {
                return Err(RasterError::Dimension(format!(
                    "band {b} has {} pixels, header says {}",
                    band.len(),
                    header.len()
                )));
            }
            if let Some(index) = band.iter().position(|v| !v.is_finite()) {
                return Err(RasterError::NonFinite { band: b, index });
            }
        }
        Ok(Self { header, bands })
    }

    pub fn header(&self) -> &GridHeader {
        &self.header
    }

    pub fn band(&self, band: Band) -> &[f32] {
        &self.bands[band as usize]
    }

    pub fn bands(&self) -> &[Vec<f32>; N_BANDS] {
        &self.bands
    }

    #[inline]
    pub fn pixel(&self, band: usize, row: usize, col: usize) -> f32 {
        self.bands[band][self.header.index(row, col)]
    }

    /// Number of pixels along one side of a population cell of
    /// `cell_size` arc-seconds. The ratio must be a positive integer that
    /// divides both stack dimensions.
    pub fn pixels_per_cell(&self, cell_size: f64) -> Result<usize> {
        let ratio = cell_size / self.header.cell_size;
        let rounded = ratio.round();
        if !(rounded >= 1.0 && (ratio - rounded).abs() <= 1e-9 * rounded) {
            return Err(RasterError::Dimension(format!(
                "cell size {cell_size}\" is not an integer multiple of pixel size {}\"",
                self.header.cell_size
            )));
        }
        let ppc = rounded as usize;
        if !self.header.n_rows.is_multiple_of(ppc) || !self.header.n_cols.is_multiple_of(ppc) {
            return Err(RasterError::Dimension(format!(
                "{}x{} pixels do not tile into {ppc}-pixel cells",
                self.header.n_rows, self.header.n_cols
            )));
        }
        Ok(ppc)
    }

    /// Header of the population lattice this stack covers at `cell_size`.
    pub fn cell_header(&self, cell_size: f64, nodata: f64) -> Result<GridHeader> {
        let ppc = self.pixels_per_cell(cell_size)?;
        Ok(GridHeader {
            n_rows: self.header.n_rows / ppc,
            n_cols: self.header.n_cols / ppc,
            cell_size,
            origin_lat: self.header.origin_lat,
            origin_lon: self.header.origin_lon,
            nodata_value: nodata,
        })
    }

    /// Checks that `grid` covers exactly the stack's footprint.
    pub fn check_covers(&self, grid: &GridHeader) -> Result<usize> {
        let expect = self.cell_header(grid.cell_size, grid.nodata_value)?;
        if expect.same_geometry(grid) {
            Ok(self.pixels_per_cell(grid.cell_size)?)
        } else {
            Err(RasterError::CoRegistration(format!(
                "imagery covers {expect:?}, grid is {grid:?}"
            )))
        }
    }
}
