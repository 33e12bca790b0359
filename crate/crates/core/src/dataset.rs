//! Supervised dataset construction: log10 targets, seeded 60/20/20 splits,
//! the JSON manifest, and target histograms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::patch::{EdgePolicy, NeighborSpec};
use crate::raster::GeoGrid;
use crate::rng::Xoshiro256StarStar;
use crate::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("count {0} lies in (0, 1); ambient counts are 0 or at least 1")]
    Domain(f64),
    #[error("empty dataset")]
    Empty,
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Train / validation / test fractions.
pub const SPLIT_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

/// `log10(p)` for `p ≥ 1`, `0` for `p = 0`.
pub fn log_transform<T: Scalar>(p: T) -> Result<T> {
    if p == T::zero() {
        Ok(T::zero())
    } else if p >= T::one() {
        Ok(p.log10())
    } else {
        Err(DatasetError::Domain(p.as_f64()))
    }
}

/// Result of mapping a log target back to a count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountEstimate<T> {
    pub count: T,
    /// `lg = 0` stands for both zero and one person; `count` is 1.
    pub ambiguous_zero: bool,
    /// A negative input was clamped to 0 before exponentiation.
    pub clamped: bool,
}

/// `10^lg`. Negative inputs clamp to 0 and are flagged.
pub fn inverse_log_transform<T: Scalar>(lg: T) -> CountEstimate<T> {
    let clamped = lg < T::zero();
    let lg = if clamped { T::zero() } else { lg };
    CountEstimate {
        count: T::of(10.0).powf(lg),
        ambiguous_zero: lg == T::zero(),
        clamped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(DatasetError::Argument(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Split sizes for `total` items: validation and test get the floor of
/// their fraction, the remainder goes to training.
pub fn split_counts(total: usize) -> (usize, usize, usize) {
    let valid = total * 20 / 100;
    let test = total * 20 / 100;
    (total - valid - test, valid, test)
}

/// Seeded split assignment, aligned with `cells`. The cells are permuted
/// with a Fisher-Yates shuffle; the first 60% of the permutation train,
/// the next 20% validate, the rest test.
pub fn split_dataset(cells: &[(usize, usize)], seed: u64) -> Result<Vec<Split>> {
    if cells.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut order: Vec<usize> = (0..cells.len()).collect();
    Xoshiro256StarStar::seed_from_u64(seed).shuffle(&mut order);
    let (n_train, n_valid, _) = split_counts(cells.len());
    let mut out = vec![Split::Test; cells.len()];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub row: usize,
    pub col: usize,
    /// Ambient count before the log transform; keeps the 0/1 collision recoverable.
    pub count: f64,
    pub target_lg: f64,
    pub split: Split,
}

impl Sample {
    pub fn cell(&self) -> (usize, usize) {
        (self.row, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n: usize,
    pub edge_policy: EdgePolicy,
    pub fractions: [f64; 3],
    pub samples: Vec<Sample>,
}

impl DatasetManifest {
    /// One sample per cell of `ambient` (row-major), dropping cells whose
    /// neighborhood leaves the lattice when the policy is `skip`.
    pub fn build(ambient: &GeoGrid<f64>, spec: &NeighborSpec, seed: u64) -> Result<Self> {
        let (rows, cols) = (ambient.n_rows(), ambient.n_cols());
        let mut cells = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                if spec.edge_policy() == EdgePolicy::Skip && !spec.fits(r, c, rows, cols) {
                    continue;
                }
                cells.push((r, c));
            }
        }
        let splits = split_dataset(&cells, seed)?;
        let samples = cells
            .iter()
            .zip(splits)
            .map(|(&(row, col), split)| {
                let count = ambient.count_at(row, col);
                Ok(Sample {
                    row,
                    col,
                    count,
                    target_lg: log_transform(count)?,
                    split,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = Self {
            seed,
            n: spec.n(),
            edge_policy: spec.edge_policy(),
            fractions: SPLIT_FRACTIONS,
            samples,
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks non-negative targets, unique cells and the split sizes.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(DatasetError::Empty);
        }
        let mut seen = std::collections::HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !(s.target_lg >= 0.0 && s.target_lg.is_finite()) {
                return Err(DatasetError::Manifest(format!(
                    "cell ({}, {}) has target {}",
                    s.row, s.col, s.target_lg
                )));
            }
            if !seen.insert(s.cell()) {
                return Err(DatasetError::Manifest(format!(
                    "cell ({}, {}) appears twice",
                    s.row, s.col
                )));
            }
        }
        let want = split_counts(self.samples.len());
        let got = (
            self.split(Split::Train).count(),
            self.split(Split::Valid).count(),
            self.split(Split::Test).count(),
        );
        if want != got {
            return Err(DatasetError::Manifest(format!(
                "split sizes {got:?}, expected {want:?}"
            )));
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> + '_ {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn neighbor_spec(&self) -> std::result::Result<NeighborSpec, crate::patch::PatchError> {
        NeighborSpec::new_unchecked_size(self.n, self.edge_policy)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

/// Histogram over half-open bins `[k·w, (k+1)·w)` spanning the data,
/// empty interior bins included.
pub fn target_histogram(targets: &[f64], bin_width: f64) -> Result<Vec<(f64, usize)>> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(DatasetError::Argument(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    if targets.is_empty() {
        return Ok(vec![]);
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(DatasetError::Argument("non-finite target".into()));
    }
    let bin = |t: f64| (t / bin_width).floor() as i64;
    let lo = targets.iter().map(|&t| bin(t)).min().expect("non-empty");
    let hi = targets.iter().map(|&t| bin(t)).max().expect("non-empty");
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for &t in targets {
        counts[(bin(t) - lo) as usize] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| ((lo + k as i64) as f64 * bin_width, c))
        .collect())
}
