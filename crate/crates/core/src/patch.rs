//! Per-cell image patches, n×n neighborhood tensors and the bilinear resize
//! to a fixed model input size.
//!
//! A neighborhood of size `n` around cell `(r, c)` is the block matrix of
//! cell patches from `(r - h, c - h)` (top-left) to `(r + h, c + h)`
//! (bottom-right), `h = (n - 1) / 2`, so the center cell's patch sits in the
//! middle block.

use crate::raster::{BandStack, RasterError, N_BANDS};
use crate::Scalar;

/// Neighborhood sizes the pipeline sweeps over.
pub const ALLOWED_SIZES: [usize; 6] = [1, 3, 5, 7, 9, 11];

#[derive(Debug, thiserror::Error)]
pub enum PatchError {
    #[error(transparent)]
    Alignment(#[from] RasterError),
    #[error("cell ({row}, {col}) outside {n_rows}x{n_cols} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("neighborhood of ({row}, {col}) leaves the raster; sample skipped")]
    EdgeSkip { row: usize, col: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, PatchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    /// Out-of-raster neighbors are zero in every band.
    #[default]
    ZeroPad,
    /// Out-of-raster pixels repeat the nearest in-raster pixel row/column.
    Clamp,
    /// Cells whose neighborhood leaves the raster are dropped.
    Skip,
}

impl EdgePolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgePolicy::ZeroPad => "zero_pad",
            EdgePolicy::Clamp => "clamp",
            EdgePolicy::Skip => "skip",
        }
    }
}

impl std::str::FromStr for EdgePolicy {
    type Err = PatchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "zero_pad" | "zero" => Ok(EdgePolicy::ZeroPad),
            "clamp" => Ok(EdgePolicy::Clamp),
            "skip" => Ok(EdgePolicy::Skip),
            other => Err(PatchError::Argument(format!("unknown edge policy `{other}`"))),
        }
    }
}

impl std::fmt::Display for EdgePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborSpec {
    n: usize,
    edge_policy: EdgePolicy,
}

impl NeighborSpec {
    /// `n` must be one of [`ALLOWED_SIZES`].
    pub fn new(n: usize, edge_policy: EdgePolicy) -> Result<Self> {
        if !ALLOWED_SIZES.contains(&n) {
            return Err(PatchError::Argument(format!(
                "neighborhood size {n} not in {ALLOWED_SIZES:?}"
            )));
        }
        Ok(Self { n, edge_policy })
    }

    /// Any odd positive `n`, bypassing the allowed-size list.
    pub fn new_unchecked_size(n: usize, edge_policy: EdgePolicy) -> Result<Self> {
        if n == 0 || n.is_multiple_of(2) {
            return Err(PatchError::Argument(format!(
                "neighborhood size must be odd and positive, got {n}"
            )));
        }
        Ok(Self { n, edge_policy })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_policy(&self) -> EdgePolicy {
        self.edge_policy
    }

    pub fn half(&self) -> usize {
        (self.n - 1) / 2
    }

    /// Whether the neighborhood of `(row, col)` fits inside the lattice.
    pub fn fits(&self, row: usize, col: usize, n_rows: usize, n_cols: usize) -> bool {
        let h = self.half();
        row >= h && col >= h && row + h < n_rows && col + h < n_cols
    }
}

/// Four-channel image tensor, channel-major (`values[c][y][x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTensor<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
    cell: (usize, usize),
    n_used: usize,
}

impl<T: Scalar> PatchTensor<T> {
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<T>,
        cell: (usize, usize),
        n_used: usize,
    ) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != N_BANDS * height * width {
            return Err(PatchError::Argument(format!(
                "{} values for a {N_BANDS}x{height}x{width} tensor",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PatchError::Argument("non-finite patch value".into()));
        }
        Ok(Self {
            height,
            width,
            values,
            cell,
            n_used,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.height * self.width;
        &self.values[c * plane..(c + 1) * plane]
    }

    pub fn cell(&self) -> (usize, usize) {
        self.cell
    }

    pub fn n_used(&self) -> usize {
        self.n_used
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.values[(c * self.height + y) * self.width + x]
    }

    /// Per-channel mean.
    pub fn channel_means(&self) -> [T; N_BANDS] {
        let denom = T::of_usize(self.height * self.width);
        std::array::from_fn(|c| self.channel(c).iter().copied().sum::<T>() / denom)
    }
}

fn check_cell(stack: &BandStack, ppc: usize, row: usize, col: usize) -> Result<()> {
    let n_rows = stack.header().n_rows / ppc;
    let n_cols = stack.header().n_cols / ppc;
    if row >= n_rows || col >= n_cols {
        return Err(PatchError::OutOfBounds {
            row,
            col,
            n_rows,
            n_cols,
        });
    }
    Ok(())
}

/// The pixel window covering one population cell.
pub fn extract_patch<T: Scalar>(
    stack: &BandStack,
    cell: (usize, usize),
    cell_size: f64,
) -> Result<PatchTensor<T>> {
    let ppc = stack.pixels_per_cell(cell_size)?;
    check_cell(stack, ppc, cell.0, cell.1)?;
    let mut values = Vec::with_capacity(N_BANDS * ppc * ppc);
    for b in 0..N_BANDS {
        for y in 0..ppc {
            for x in 0..ppc {
                values.push(T::of(stack.pixel(b, cell.0 * ppc + y, cell.1 * ppc + x) as f64));
            }
        }
    }
    PatchTensor::new(ppc, ppc, values, cell, 1)
}

/// The `n·ppc × n·ppc` window centered on `cell`, out-of-raster pixels
/// filled according to the spec's edge policy.
pub fn assemble_neighborhood<T: Scalar>(
    stack: &BandStack,
    cell: (usize, usize),
    spec: &NeighborSpec,
    cell_size: f64,
) -> Result<PatchTensor<T>> {
    let ppc = stack.pixels_per_cell(cell_size)?;
    check_cell(stack, ppc, cell.0, cell.1)?;
    let (h_px, w_px) = (stack.header().n_rows as isize, stack.header().n_cols as isize);
    let grid_rows = stack.header().n_rows / ppc;
    let grid_cols = stack.header().n_cols / ppc;
    if spec.edge_policy() == EdgePolicy::Skip && !spec.fits(cell.0, cell.1, grid_rows, grid_cols) {
        return Err(PatchError::EdgeSkip {
            row: cell.0,
            col: cell.1,
        });
    }
    let side = spec.n() * ppc;
    let y0 = (cell.0 as isize - spec.half() as isize) * ppc as isize;
    let x0 = (cell.1 as isize - spec.half() as isize) * ppc as isize;
    let mut values = Vec::with_capacity(N_BANDS * side * side);
    for b in 0..N_BANDS {
        for dy in 0..side as isize {
            for dx in 0..side as isize {
                let (y, x) = (y0 + dy, x0 + dx);
                let inside = y >= 0 && x >= 0 && y < h_px && x < w_px;
                let v = match (inside, spec.edge_policy()) {
                    (true, _) => stack.pixel(b, y as usize, x as usize),
                    (false, EdgePolicy::Clamp) => {
                        stack.pixel(b, y.clamp(0, h_px - 1) as usize, x.clamp(0, w_px - 1) as usize)
                    }
                    (false, _) => 0.0,
                };
                values.push(T::of(v as f64));
            }
        }
    }
    PatchTensor::new(side, side, values, cell, spec.n())
}

/// Bilinear resample of every channel to `out_size × out_size` with
/// corner-aligned sampling: output pixel `i` reads input coordinate
/// `i·(in−1)/(out−1)`.
pub fn resize_bilinear<T: Scalar>(patch: &PatchTensor<T>, out_size: usize) -> Result<PatchTensor<T>> {
    if out_size == 0 {
        return Err(PatchError::Argument("output size must be positive".into()));
    }
    if patch.height != patch.width {
        return Err(PatchError::Argument(format!(
            "patch is {}x{}, expected square",
            patch.height, patch.width
        )));
    }
    let input = patch.height;
    let taps: Vec<(usize, usize, T)> = (0..out_size)
        .map(|i| {
            let src = if out_size == 1 {
                (input - 1) as f64 / 2.0
            } else {
                (i * (input - 1)) as f64 / (out_size - 1) as f64
            };
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, T::of(src - lo as f64))
        })
        .collect();
    let mut values = Vec::with_capacity(N_BANDS * out_size * out_size);
    for c in 0..N_BANDS {
        let ch = patch.channel(c);
        for &(y0, y1, fy) in &taps {
            for &(x0, x1, fx) in &taps {
                let top = ch[y0 * input + x0] * (T::one() - fx) + ch[y0 * input + x1] * fx;
                let bottom = ch[y1 * input + x0] * (T::one() - fx) + ch[y1 * input + x1] * fx;
                let v = top * (T::one() - fy) + bottom * fy;
                values.push(v);
            }
        }
    }
    PatchTensor::new(out_size, out_size, values, patch.cell, patch.n_used)
}

/// Share of the input image area taken by the center cell: `1/n²`.
pub fn info_proportion(n: usize) -> Result<f64> {
    if n == 0 || n.is_multiple_of(2) {
        return Err(PatchError::Argument(format!(
            "neighborhood size must be odd and positive, got {n}"
        )));
    }
    Ok(1.0 / (n * n) as f64)
}

/// Source of model-ready tensors for lattice cells.
pub trait PatchProvider<T>: Sync {
    fn patch(&self, cell: (usize, usize)) -> Result<PatchTensor<T>>;

    /// Side length of the tensors this provider yields.
    fn size(&self) -> usize;
}

/// Assembles neighborhoods from a band stack on demand and resizes them
/// to the model input size.
pub struct StackPatches<'a> {
    stack: &'a BandStack,
    spec: NeighborSpec,
    cell_size: f64,
    input_size: usize,
}

impl<'a> StackPatches<'a> {
    pub fn new(
        stack: &'a BandStack,
        spec: NeighborSpec,
        cell_size: f64,
        input_size: usize,
    ) -> Result<Self> {
        stack.pixels_per_cell(cell_size)?;
        if input_size == 0 {
            return Err(PatchError::Argument("input size must be positive".into()));
        }
        Ok(Self {
            stack,
            spec,
            cell_size,
            input_size,
        })
    }

    pub fn spec(&self) -> &NeighborSpec {
        &self.spec
    }
}

impl<T: Scalar> PatchProvider<T> for StackPatches<'_> {
    fn patch(&self, cell: (usize, usize)) -> Result<PatchTensor<T>> {
        let raw = assemble_neighborhood(self.stack, cell, &self.spec, self.cell_size)?;
        if raw.height() == self.input_size {
            Ok(raw)
        } else {
            resize_bilinear(&raw, self.input_size)
        }
    }

    fn size(&self) -> usize {
        self.input_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GridHeader;
    use crate::rng::Xoshiro256StarStar;
    use proptest::prelude::*;

    fn random_stack(rows: usize, cols: usize, pixel: f64, seed: u64) -> BandStack {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let h = GridHeader::new(rows, cols, pixel).unwrap();
        BandStack::new(
            h,
            std::array::from_fn(|_| (0..rows * cols).map(|_| rng.next_f64() as f32).collect()),
        )
        .unwrap()
    }

    /// Stack whose every pixel in cell (r, c) equals `r * n_cols + c + 1`
    /// (plus 100·band), 2 pixels per cell.
    fn labeled_stack(cells_r: usize, cells_c: usize) -> BandStack {
        let ppc = 2;
        let (h, w) = (cells_r * ppc, cells_c * ppc);
        let header = GridHeader::new(h, w, 15.0).unwrap();
        BandStack::new(
            header,
            std::array::from_fn(|b| {
                (0..h * w)
                    .map(|i| {
                        let (y, x) = (i / w, i % w);
                        ((y / ppc) * cells_c + x / ppc + 1) as f32 + 100.0 * b as f32
                    })
                    .collect()
            }),
        )
        .unwrap()
    }

    #[test]
    fn top_left_window() {
        let s = random_stack(4, 4, 15.0, 1);
        let p: PatchTensor<f64> = extract_patch(&s, (0, 0), 30.0).unwrap();
        assert_eq!((p.height(), p.width(), p.n_used()), (2, 2, 1));
        for b in 0..4 {
            for y in 0..2 {
                for x in 0..2 {
                    assert_eq!(p.at(b, y, x), s.pixel(b, y, x) as f64);
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_cell() {
        let s = random_stack(4, 4, 15.0, 1);
        assert!(matches!(
            extract_patch::<f64>(&s, (2, 0), 30.0),
            Err(PatchError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn misaligned_cell_size() {
        let s = random_stack(4, 4, 15.0, 1);
        assert!(matches!(
            extract_patch::<f64>(&s, (0, 0), 20.0),
            Err(PatchError::Alignment(_))
        ));
    }

    #[test]
    fn patches_tile_the_stack() {
        let s = random_stack(12, 9, 10.0, 5);
        let mut hits = vec![0u32; 12 * 9];
        for r in 0..4 {
            for c in 0..3 {
                let p: PatchTensor<f64> = extract_patch(&s, (r, c), 30.0).unwrap();
                for y in 0..3 {
                    for x in 0..3 {
                        let (py, px) = (r * 3 + y, c * 3 + x);
                        hits[py * 9 + px] += 1;
                        for b in 0..4 {
                            assert_eq!(p.at(b, y, x), s.pixel(b, py, px) as f64);
                        }
                    }
                }
            }
        }
        assert!(hits.iter().all(|&h| h == 1));
    }

    #[test]
    fn n1_equals_extract_everywhere() {
        let s = random_stack(10, 8, 15.0, 2);
        for policy in [EdgePolicy::ZeroPad, EdgePolicy::Clamp, EdgePolicy::Skip] {
            let spec = NeighborSpec::new(1, policy).unwrap();
            for r in 0..5 {
                for c in 0..4 {
                    let a: PatchTensor<f64> = extract_patch(&s, (r, c), 30.0).unwrap();
                    let b: PatchTensor<f64> = assemble_neighborhood(&s, (r, c), &spec, 30.0).unwrap();
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn labeled_blocks_follow_block_matrix_layout() {
        let s = labeled_stack(5, 5);
        let spec = NeighborSpec::new(3, EdgePolicy::ZeroPad).unwrap();
        let p: PatchTensor<f64> = assemble_neighborhood(&s, (2, 2), &spec, 30.0).unwrap();
        assert_eq!(p.height(), 6);
        // Block (i, j) of the 3x3 arrangement holds the label of cell (1 + i, 1 + j).
        for b in 0..4 {
            for y in 0..6 {
                for x in 0..6 {
                    let (bi, bj) = (y / 2, x / 2);
                    let label = ((1 + bi) * 5 + (1 + bj) + 1) as f64 + 100.0 * b as f64;
                    assert_eq!(p.at(b, y, x), label);
                }
            }
        }
    }

    #[test]
    fn corner_zero_pad_blanks_five_blocks() {
        let s = labeled_stack(4, 4);
        let spec = NeighborSpec::new(3, EdgePolicy::ZeroPad).unwrap();
        let p: PatchTensor<f64> = assemble_neighborhood(&s, (0, 0), &spec, 30.0).unwrap();
        let mut zero_blocks = 0;
        for bi in 0..3 {
            for bj in 0..3 {
                let all_zero = (0..4).all(|b| {
                    (0..2).all(|y| (0..2).all(|x| p.at(b, bi * 2 + y, bj * 2 + x) == 0.0))
                });
                zero_blocks += all_zero as usize;
            }
        }
        assert_eq!(zero_blocks, 5);
    }

    #[test]
    fn clamp_repeats_edge_pixels() {
        let s = labeled_stack(3, 3);
        let spec = NeighborSpec::new(3, EdgePolicy::Clamp).unwrap();
        let p: PatchTensor<f64> = assemble_neighborhood(&s, (0, 0), &spec, 30.0).unwrap();
        // Top-left block clamps to cell (0, 0), whose label is 1.
        assert_eq!(p.at(0, 0, 0), 1.0);
        assert_eq!(p.at(0, 0, 5), 2.0);
        assert_eq!(p.at(0, 5, 0), 4.0);
    }

    #[test]
    fn skip_signals_edge_cells_only() {
        let s = labeled_stack(5, 5);
        let spec = NeighborSpec::new(3, EdgePolicy::Skip).unwrap();
        assert!(matches!(
            assemble_neighborhood::<f64>(&s, (0, 2), &spec, 30.0),
            Err(PatchError::EdgeSkip { row: 0, col: 2 })
        ));
        assert!(assemble_neighborhood::<f64>(&s, (1, 1), &spec, 30.0).is_ok());
    }

    #[test]
    fn spec_validation() {
        assert!(NeighborSpec::new(2, EdgePolicy::ZeroPad).is_err());
        assert!(NeighborSpec::new(13, EdgePolicy::ZeroPad).is_err());
        assert!(NeighborSpec::new_unchecked_size(13, EdgePolicy::ZeroPad).is_ok());
        assert!(NeighborSpec::new_unchecked_size(4, EdgePolicy::ZeroPad).is_err());
    }

    fn tensor(size: usize, f: impl Fn(usize, usize, usize) -> f64) -> PatchTensor<f64> {
        let mut v = vec![];
        for c in 0..4 {
            for y in 0..size {
                for x in 0..size {
                    v.push(f(c, y, x));
                }
            }
        }
        PatchTensor::new(size, size, v, (0, 0), 1).unwrap()
    }

    #[test]
    fn resize_identity_and_constant() {
        let p = tensor(5, |c, y, x| (c * 25 + y * 5 + x) as f64 * 0.37);
        assert_eq!(resize_bilinear(&p, 5).unwrap(), p);
        let k = tensor(3, |_, _, _| 0.42);
        let r = resize_bilinear(&k, 7).unwrap();
        assert!(r.values().iter().all(|&v| (v - 0.42).abs() < 1e-15));
        assert!(resize_bilinear(&k, 0).is_err());
    }

    /// Scalar bilinear oracle written against continuous coordinates.
    fn bilinear_oracle(img: &[[f64; 2]; 2], u: f64, v: f64) -> f64 {
        img[0][0] * (1.0 - u) * (1.0 - v)
            + img[0][1] * (1.0 - u) * v
            + img[1][0] * u * (1.0 - v)
            + img[1][1] * u * v
    }

    #[test]
    fn two_by_two_to_four_by_four() {
        let img = [[0.0, 1.0], [0.0, 1.0]];
        let p = tensor(2, |_, y, x| img[y][x]);
        let r = resize_bilinear(&p, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let want = bilinear_oracle(&img, y as f64 / 3.0, x as f64 / 3.0);
                assert!((r.at(0, y, x) - want).abs() <= 1e-12);
            }
        }
        assert!((r.at(0, 0, 1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn info_proportion_values() {
        assert_eq!(info_proportion(1).unwrap(), 1.0);
        assert!((info_proportion(3).unwrap() * 100.0 - 11.11).abs() < 0.01);
        assert!((info_proportion(11).unwrap() * 100.0 - 0.83).abs() < 0.01);
        assert!(info_proportion(4).is_err());
        assert!(info_proportion(0).is_err());
        for n in ALLOWED_SIZES {
            let whole = info_proportion(n).unwrap() * (n * n) as f64;
            assert!((whole - 1.0).abs() <= f64::EPSILON, "n={n}: {whole}");
        }
    }

    proptest! {
        #[test]
        fn center_block_matches_extract(seed in 0u64..1000, n in prop::sample::select(vec![3usize, 5, 7])) {
            let s = random_stack(24, 24, 15.0, seed);
            let spec = NeighborSpec::new(n, EdgePolicy::ZeroPad).unwrap();
            let cell = (6, 6);
            let nb: PatchTensor<f64> = assemble_neighborhood(&s, cell, &spec, 30.0).unwrap();
            let center: PatchTensor<f64> = extract_patch(&s, cell, 30.0).unwrap();
            let off = spec.half() * 2;
            for b in 0..4 {
                for y in 0..2 {
                    for x in 0..2 {
                        prop_assert_eq!(nb.at(b, off + y, off + x), center.at(b, y, x));
                    }
                }
            }
        }

        #[test]
        fn resize_stays_within_channel_range(
            vals in prop::collection::vec(-3.0f64..3.0, 4 * 36),
            out in 1usize..20,
        ) {
            let p = PatchTensor::new(6, 6, vals, (0, 0), 1).unwrap();
            let r = resize_bilinear(&p, out).unwrap();
            for c in 0..4 {
                let lo = p.channel(c).iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = p.channel(c).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for &v in r.channel(c) {
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }
}
