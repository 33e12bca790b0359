//! Seeded synthetic scenes: a smooth latent density field rendered into a
//! four-band stack, day/night population grids derived from it, and an
//! optional confound that raises population in dense cells without touching
//! the imagery.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::raster::{BandStack, GeoGrid, GridHeader, RasterError, N_BANDS};
use crate::rng::Xoshiro256StarStar;

/// Population cell size of generated scenes, arc-seconds.
pub const CELL_SIZE_ARCSEC: f64 = 30.0;
/// Upper-left corner of generated scenes (lat, lon).
pub const ORIGIN: (f64, f64) = (37.7, 126.8);
/// Nodata value written into generated grids.
pub const NODATA: f64 = -9999.0;

const BLOB_STREAM: u64 = 0x424c_4f42;
const NOISE_STREAM: u64 = 0x4e4f_4953;
const CONFOUND_STREAM: u64 = 0x434f_4e46;
const JITTER_STREAM: u64 = 0x4a49_5454;

/// Band signature `offset + slope * f` for built-up fraction `f`:
/// built-up pixels are bright in R/G/B and dark in NIR.
const SIGNATURE: [(f64, f64); N_BANDS] = [(0.05, 0.25), (0.08, 0.22), (0.04, 0.26), (0.45, -0.30)];

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub n_rows: usize,
    pub n_cols: usize,
    pub pixels_per_cell: usize,
    pub seed: u64,
    /// Blob radius in cells.
    pub correlation_length: f64,
    /// Expected count of the densest cell.
    pub pop_scale: f64,
    pub confound_fraction: f64,
    pub confound_multiplier: f64,
    pub pixel_noise_sd: f64,
    /// Day/night split as a fraction of the ambient count.
    pub day_night_jitter: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_rows: 48,
            n_cols: 48,
            pixels_per_cell: 8,
            seed: 7,
            correlation_length: 2.0,
            pop_scale: 3000.0,
            confound_fraction: 0.0,
            confound_multiplier: 5.0,
            pixel_noise_sd: 0.02,
            day_night_jitter: 0.2,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SynthError::Spec(m));
        if self.n_rows == 0 || self.n_cols == 0 {
            return fail(format!("{}x{} cells", self.n_rows, self.n_cols));
        }
        if self.pixels_per_cell < 4 {
            return fail(format!("pixels_per_cell {} < 4", self.pixels_per_cell));
        }
        if !(self.correlation_length.is_finite() && self.correlation_length > 0.0) {
            return fail(format!("correlation_length {}", self.correlation_length));
        }
        if !(self.pop_scale.is_finite() && self.pop_scale >= 0.0) {
            return fail(format!("pop_scale {}", self.pop_scale));
        }
        if !(0.0..=1.0).contains(&self.confound_fraction) {
            return fail(format!("confound_fraction {} outside [0, 1]", self.confound_fraction));
        }
        if !(self.confound_multiplier.is_finite() && self.confound_multiplier >= 1.0) {
            return fail(format!("confound_multiplier {} < 1", self.confound_multiplier));
        }
        if !(self.pixel_noise_sd.is_finite() && self.pixel_noise_sd >= 0.0) {
            return fail(format!("pixel_noise_sd {}", self.pixel_noise_sd));
        }
        if !(0.0..=1.0).contains(&self.day_night_jitter) {
            return fail(format!("day_night_jitter {} outside [0, 1]", self.day_night_jitter));
        }
        Ok(())
    }

    pub fn cell_header(&self) -> GridHeader {
        GridHeader {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            cell_size: CELL_SIZE_ARCSEC,
            origin_lat: ORIGIN.0,
            origin_lon: ORIGIN.1,
            nodata_value: NODATA,
        }
    }

    pub fn pixel_header(&self) -> GridHeader {
        let ppc = self.pixels_per_cell;
        GridHeader {
            n_rows: self.n_rows * ppc,
            n_cols: self.n_cols * ppc,
            cell_size: CELL_SIZE_ARCSEC / ppc as f64,
            origin_lat: ORIGIN.0,
            origin_lon: ORIGIN.1,
            nodata_value: NODATA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundedCell {
    pub row: usize,
    pub col: usize,
    /// Count implied by the imagery.
    pub base: f64,
    /// Count actually placed in the grid.
    pub ambient: f64,
}

/// Contents of `scene_truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub spec: SceneSpec,
    pub confounded: Vec<ConfoundedCell>,
}

impl SceneTruth {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn is_confounded(&self, row: usize, col: usize) -> bool {
        self.confounded.iter().any(|c| c.row == row && c.col == col)
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub stack: BandStack,
    pub day: GeoGrid<f64>,
    pub night: GeoGrid<f64>,
    /// What `combine_ambient(day, night)` must return.
    pub ambient: GeoGrid<f64>,
    /// Cell means of the latent built-up fraction, row-major.
    pub density: Vec<f64>,
    pub truth: SceneTruth,
    pub warnings: Vec<String>,
}

/// Per-pixel latent field in [0, 1]: a normalized sum of Gaussian blobs of
/// radius `correlation_length` cells.
fn density_field(spec: &SceneSpec) -> Vec<f64> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(spec.seed ^ BLOB_STREAM);
    let n_blobs = ((spec.n_rows * spec.n_cols) / 64).max(4);
    let blobs: Vec<(f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            let y = rng.uniform(0.0, spec.n_rows as f64);
            let x = rng.uniform(0.0, spec.n_cols as f64);
            let a = rng.uniform(0.5, 1.0);
            (y, x, a)
        })
        .collect();

    let ppc = spec.pixels_per_cell as f64;
    let (h, w) = (spec.n_rows * spec.pixels_per_cell, spec.n_cols * spec.pixels_per_cell);
    let inv = 1.0 / (2.0 * spec.correlation_length * spec.correlation_length);
    let mut field = vec![0.0; h * w];
    for py in 0..h {
        let y = (py as f64 + 0.5) / ppc;
        for px in 0..w {
            let x = (px as f64 + 0.5) / ppc;
            field[py * w + px] = blobs
                .iter()
                .map(|&(by, bx, a)| a * (-((y - by).powi(2) + (x - bx).powi(2)) * inv).exp())
                .sum();
        }
    }
    let max = field.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        field.iter_mut().for_each(|v| *v /= max);
    }
    field
}

fn cell_means(field: &[f64], spec: &SceneSpec) -> Vec<f64> {
    let ppc = spec.pixels_per_cell;
    let w = spec.n_cols * ppc;
    let mut out = vec![0.0; spec.n_rows * spec.n_cols];
    for r in 0..spec.n_rows {
        for c in 0..spec.n_cols {
            let mut s = 0.0;
            for dy in 0..ppc {
                let row = &field[(r * ppc + dy) * w + c * ppc..][..ppc];
                s += row.iter().sum::<f64>();
            }
            out[r * spec.n_cols + c] = s / (ppc * ppc) as f64;
        }
    }
    out
}

fn render_bands(field: &[f64], spec: &SceneSpec) -> [Vec<f32>; N_BANDS] {
    let mut rng = Xoshiro256StarStar::seed_from_u64(spec.seed ^ NOISE_STREAM);
    std::array::from_fn(|b| {
        let (offset, slope) = SIGNATURE[b];
        field
            .iter()
            .map(|&f| {
                let noise = if spec.pixel_noise_sd > 0.0 {
                    spec.pixel_noise_sd * rng.normal()
                } else {
                    0.0
                };
                (offset + slope * f + noise).clamp(0.0, 1.0) as f32
            })
            .collect()
    })
}

/// Count implied by density `d`: `pop_scale * d²` rounded, or 0 below one.
pub fn base_count(spec: &SceneSpec, d: f64) -> f64 {
    let p = spec.pop_scale * d * d;
    if p >= 1.0 {
        p.round()
    } else {
        0.0
    }
}

/// Indices of the densest quarter of cells, densest first; ties keep
/// row-major order.
fn top_quartile(density: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..density.len()).collect();
    order.sort_by(|&a, &b| density[b].total_cmp(&density[a]).then(a.cmp(&b)));
    order.truncate(density.len() / 4);
    order
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut warnings = Vec::new();
    if spec.pop_scale == 0.0 {
        warnings.push("pop_scale is 0: every cell is empty (flat scene)".to_string());
    }

    let field = density_field(spec);
    let density = cell_means(&field, spec);
    let stack = BandStack::new(spec.pixel_header(), render_bands(&field, spec))?;

    let mut ambient: Vec<f64> = density.iter().map(|&d| base_count(spec, d)).collect();
    let mut confounded = Vec::new();
    let mut candidates = top_quartile(&density);
    let k = (spec.confound_fraction * candidates.len() as f64).round() as usize;
    if k > 0 {
        let mut rng = Xoshiro256StarStar::seed_from_u64(spec.seed ^ CONFOUND_STREAM);
        rng.shuffle(&mut candidates);
        let mut chosen = candidates[..k].to_vec();
        chosen.sort_unstable();
        for i in chosen {
            let base = ambient[i];
            ambient[i] = (spec.confound_multiplier * base).round();
            confounded.push(ConfoundedCell {
                row: i / spec.n_cols,
                col: i % spec.n_cols,
                base,
                ambient: ambient[i],
            });
        }
    }

    // Integer ambient counts split into integer day/night values so their
    // mean is exact; empty cells get a sub-unit value that the combine zeroes.
    let mut rng = Xoshiro256StarStar::seed_from_u64(spec.seed ^ JITTER_STREAM);
    let mut day = Vec::with_capacity(ambient.len());
    let mut night = Vec::with_capacity(ambient.len());
    for (&a, &d) in ambient.iter().zip(&density) {
        let u = rng.uniform(-1.0, 1.0);
        if a >= 1.0 {
            let delta = (spec.day_night_jitter * a * u).round();
            day.push(a + delta);
            night.push(a - delta);
        } else {
            let residue = ((spec.pop_scale * d * d).min(0.9999) * 1e4).floor() / 1e4;
            day.push(residue);
            night.push(residue);
        }
    }

    let header = spec.cell_header();
    Ok(Scene {
        stack,
        day: GeoGrid::new(header, day)?,
        night: GeoGrid::new(header, night)?,
        ambient: GeoGrid::new(header, ambient)?,
        density,
        truth: SceneTruth {
            spec: spec.clone(),
            confounded,
        },
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneStats {
    pub cells: usize,
    pub zero_fraction: f64,
    pub confound_count: usize,
    /// `(bin lower edge, count)` of log10 targets, bin width 0.5.
    pub target_histogram: Vec<(f64, usize)>,
    /// Variance of bin occupancy fractions over ten equal-width bins; lower
    /// is flatter.
    pub log_target_peakedness: f64,
    pub count_peakedness: f64,
    pub density_moran_i: f64,
}

fn peakedness(values: &[f64], bins: usize) -> f64 {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || hi <= lo {
        return 1.0;
    }
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / (hi - lo)) * bins as f64) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let n = values.len() as f64;
    let mean = 1.0 / bins as f64;
    counts.iter().map(|&c| (c as f64 / n - mean).powi(2)).sum::<f64>() / bins as f64
}

/// Moran's I with rook (lag-1) adjacency.
pub fn moran_i(values: &[f64], n_rows: usize, n_cols: usize) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let (mut cross, mut weight) = (0.0, 0.0);
    for r in 0..n_rows {
        for c in 0..n_cols {
            let i = r * n_cols + c;
            if c + 1 < n_cols {
                cross += z[i] * z[i + 1];
                weight += 1.0;
            }
            if r + 1 < n_rows {
                cross += z[i] * z[i + n_cols];
                weight += 1.0;
            }
        }
    }
    let ss: f64 = z.iter().map(|v| v * v).sum();
    if weight == 0.0 || ss == 0.0 {
        return 0.0;
    }
    (n / weight) * cross / ss
}

pub fn scene_stats(scene: &Scene) -> SceneStats {
    let counts = scene.ambient.values();
    let targets: Vec<f64> = counts
        .iter()
        .map(|&a| if a >= 1.0 { a.log10() } else { 0.0 })
        .collect();
    let zeros = counts.iter().filter(|&&a| a == 0.0).count();
    let spec = &scene.truth.spec;
    SceneStats {
        cells: counts.len(),
        zero_fraction: zeros as f64 / counts.len() as f64,
        confound_count: scene.truth.confounded.len(),
        target_histogram: crate::dataset::target_histogram(&targets, 0.5).unwrap_or_default(),
        log_target_peakedness: peakedness(&targets, 10),
        count_peakedness: peakedness(counts, 10),
        density_moran_i: moran_i(&scene.density, spec.n_rows, spec.n_cols),
    }
}
