//! ESRI ASCII grid reader and writer.
//!
//! Layout written:
//!
//! ```text
//! ncols 3
//! nrows 2
//! xllcorner -84.5
//! yllcorner 33.98333333333333
//! cellsize 0.008333333333333333
//! NODATA_value -9999
//! 1 2 3
//! 4 5 6
//! ```
//!
//! Corners and `cellsize` are in degrees; the in-memory header keeps the
//! upper-left corner and arc-seconds. On read, the cell size snaps to 1e-6
//! arc-seconds and the corner to 1e-9 degrees. Data values carry six significant
//! digits, header numbers are written at full precision.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{GeoGrid, GridHeader, RasterError, Result};
use crate::Scalar;

const HEADER_KEYS: [&str; 6] = [
    "ncols",
    "nrows",
    "xllcorner",
    "yllcorner",
    "cellsize",
    "NODATA_value",
];

/// Six significant digits, shortest rendering (`0`, `15`, `0.123457`, `1.5e-7`).
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("scientific literal parses");
    format!("{rounded}")
}

/// Round to a multiple of `1/scale`; dividing the rounded integer keeps
/// the result correctly rounded (`32.184`, not `32.184000000000005`).
fn snap(v: f64, scale: f64) -> f64 {
    (v * scale).round() / scale
}

pub fn read_ascii_grid<T: Scalar>(path: impl AsRef<Path>) -> Result<GeoGrid<T>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let parse_err = |line: usize, msg: String| RasterError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut lines = reader.lines().enumerate();
    let mut fields = [f64::NAN; 6];
    let mut seen = [false; 6];
    for _ in 0..HEADER_KEYS.len() {
        let (i, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, "truncated header".into()))?;
        let line = line?;
        let lineno = i + 1;
        let mut toks = line.split_whitespace();
        let key = toks
            .next()
            .ok_or_else(|| parse_err(lineno, "blank header line".into()))?;
        let slot = HEADER_KEYS
            .iter()
            .position(|k| k.eq_ignore_ascii_case(key))
            .ok_or_else(|| parse_err(lineno, format!("unknown header key `{key}`")))?;
        if seen[slot] {
            return Err(parse_err(lineno, format!("duplicate header key `{key}`")));
        }
        let raw = toks
            .next()
            .ok_or_else(|| parse_err(lineno, format!("missing value for `{key}`")))?;
        if toks.next().is_some() {
            return Err(parse_err(lineno, format!("trailing tokens after `{key}`")));
        }
        fields[slot] = raw
            .parse::<f64>()
            .map_err(|e| parse_err(lineno, format!("bad `{key}` value `{raw}`: {e}")))?;
        seen[slot] = true;
    }

    let as_dim = |v: f64, key: &str| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(parse_err(0, format!("`{key}` must be a positive integer, got {v}")))
        }
    };
    let n_cols = as_dim(fields[0], "ncols")?;
    let n_rows = as_dim(fields[1], "nrows")?;
    let cell_size = snap(fields[4] * 3600.0, 1e6);
    let header = GridHeader {
        n_rows,
        n_cols,
        cell_size,
        origin_lat: snap(fields[3] + n_rows as f64 * cell_size / 3600.0, 1e9),
        origin_lon: snap(fields[2], 1e9),
        nodata_value: fields[5],
    };
    header.validate()?;

    let mut values = Vec::with_capacity(header.len());
    let mut rows = 0usize;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad value `{tok}`: {e}")))?;
            values.push(T::of(v));
        }
        let got = values.len() - before;
        if got != n_cols {
            return Err(RasterError::Dimension(format!(
                "line {lineno}: {got} values, ncols is {n_cols}"
            )));
        }
        rows += 1;
    }
    if rows != n_rows {
        return Err(RasterError::Dimension(format!(
            "{rows} data rows, nrows is {n_rows}"
        )));
    }
    GeoGrid::new(header, values)
}

pub fn write_ascii_grid<T: Scalar>(grid: &GeoGrid<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let h = grid.header();
    let lower_lat = h.origin_lat - h.n_rows as f64 * h.cell_size / 3600.0;
    writeln!(w, "ncols {}", h.n_cols)?;
    writeln!(w, "nrows {}", h.n_rows)?;
    writeln!(w, "xllcorner {}", h.origin_lon)?;
    writeln!(w, "yllcorner {}", lower_lat)?;
    writeln!(w, "cellsize {}", h.cell_size / 3600.0)?;
    writeln!(w, "NODATA_value {}", h.nodata_value)?;
    let mut line = String::new();
    for row in grid.values().chunks(h.n_cols) {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(' ');
            }
            let v = v.as_f64();
            if v == h.nodata_value {
                line.push_str(&format!("{v}"));
            } else {
                line.push_str(&format_value(v));
            }
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256StarStar;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn reads_two_by_two() {
        let dir = tmp();
        let p = dir.path().join("g.asc");
        std::fs::write(
            &p,
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 0.008333333333333333\nNODATA_value -9999\n1 2\n3 4\n",
        )
        .unwrap();
        let g: GeoGrid<f64> = read_ascii_grid(&p).unwrap();
        assert_eq!(g.values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.header().cell_size, 30.0);
        assert_eq!(g.header().origin_lat, 0.016666667);
    }

    #[test]
    fn short_rows_are_a_dimension_error() {
        let dir = tmp();
        let p = dir.path().join("g.asc");
        std::fs::write(
            &p,
            "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n",
        )
        .unwrap();
        let err = read_ascii_grid::<f64>(&p).unwrap_err();
        assert!(matches!(err, RasterError::Dimension(_)), "{err}");
    }

    #[test]
    fn bad_header_token_names_the_line() {
        let dir = tmp();
        let p = dir.path().join("g.asc");
        std::fs::write(
            &p,
            "ncols 2\nnrows 2\nxllcorner zero\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n",
        )
        .unwrap();
        match read_ascii_grid::<f64>(&p).unwrap_err() {
            RasterError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_data_rows() {
        let dir = tmp();
        let p = dir.path().join("g.asc");
        std::fs::write(
            &p,
            "ncols 2\nnrows 3\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n",
        )
        .unwrap();
        assert!(matches!(
            read_ascii_grid::<f64>(&p),
            Err(RasterError::Dimension(_))
        ));
    }

    #[test]
    fn single_zero_cell_text() {
        let dir = tmp();
        let p = dir.path().join("z.asc");
        let h = GridHeader::new(1, 1, 30.0).unwrap();
        write_ascii_grid(&GeoGrid::new(h, vec![0.0f64]).unwrap(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "ncols 1");
        assert_eq!(lines[1], "nrows 1");
        assert_eq!(lines[5], "NODATA_value -9999");
        assert_eq!(lines[6], "0");
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn nodata_is_written_verbatim() {
        let dir = tmp();
        let p = dir.path().join("n.asc");
        let h = GridHeader::new(1, 3, 30.0).unwrap();
        write_ascii_grid(&GeoGrid::new(h, vec![1.5f64, -9999.0, 2.0]).unwrap(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().last().unwrap(), "1.5 -9999 2");
        let back: GeoGrid<f64> = read_ascii_grid(&p).unwrap();
        assert!(back.is_nodata(back.get(0, 1)));
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(15.0), "15");
        assert_eq!(format_value(0.1234567), "0.123457");
        assert_eq!(format_value(1234567.0), "1234570");
        assert_eq!(format_value(-2.5), "-2.5");
    }

    fn random_header(rng: &mut Xoshiro256StarStar, rows: usize, cols: usize) -> GridHeader {
        let lat = snap(rng.uniform(-60.0, 60.0), 1e3);
        let lon = snap(rng.uniform(-170.0, 170.0), 1e3);
        GridHeader::new(rows, cols, [3.0, 30.0, 10.0, 3.75][rng.bounded(4) as usize])
            .unwrap()
            .with_origin(lat, lon)
    }

    #[test]
    fn round_trip_is_identity_for_six_digit_values() {
        let dir = tmp();
        let mut rng = Xoshiro256StarStar::seed_from_u64(42);
        for k in 0..100 {
            let rows = 1 + rng.bounded(12) as usize;
            let cols = 1 + rng.bounded(12) as usize;
            let h = random_header(&mut rng, rows, cols);
            let values: Vec<f64> = (0..rows * cols)
                .map(|_| match rng.bounded(5) {
                    0 => -9999.0,
                    1 => 0.0,
                    _ => rng.bounded(1_000_000) as f64 / 100.0,
                })
                .collect();
            let g = GeoGrid::new(h, values).unwrap();
            let p = dir.path().join(format!("g{k}.asc"));
            write_ascii_grid(&g, &p).unwrap();
            let back: GeoGrid<f64> = read_ascii_grid(&p).unwrap();
            assert_eq!(back, g, "grid {k}");
        }
    }

    #[test]
    fn round_trip_within_serialization_precision() {
        let dir = tmp();
        let mut rng = Xoshiro256StarStar::seed_from_u64(7);
        let h = random_header(&mut rng, 50, 50);
        let values: Vec<f64> = (0..2500).map(|_| rng.next_f64()).collect();
        let g = GeoGrid::new(h, values).unwrap();
        let p = dir.path().join("r.asc");
        write_ascii_grid(&g, &p).unwrap();
        let back: GeoGrid<f64> = read_ascii_grid(&p).unwrap();
        assert_eq!(back.header(), g.header());
        for (a, b) in back.values().iter().zip(g.values()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }
}
