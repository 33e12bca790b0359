//! BGRD band-stack container.
//!
//! ```text
//! "BGRD" | u32 version=1 | u32 n_rows | u32 n_cols | u32 n_bands=4
//!        | f64 cell_size_arcsec | f64 origin_lat | f64 origin_lon
//!        | R, G, B, NIR as row-major f32
//! ```
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BandStack, GridHeader, RasterError, Result, N_BANDS};

pub const BGRD_MAGIC: &[u8; 4] = b"BGRD";
pub const BGRD_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_bandstack(path: impl AsRef<Path>) -> Result<BandStack> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BGRD_MAGIC {
        return Err(RasterError::Format(format!(
            "magic bytes {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u32(&mut r)?;
    if version != BGRD_VERSION {
        return Err(RasterError::Format(format!("unknown version {version}")));
    }
    let n_rows = read_u32(&mut r)? as usize;
    let n_cols = read_u32(&mut r)? as usize;
    let n_bands = read_u32(&mut r)?;
    if n_bands as usize != N_BANDS {
        return Err(RasterError::UnsupportedStack(n_bands));
    }
    let header = GridHeader {
        n_rows,
        n_cols,
        cell_size: read_f64(&mut r)?,
        origin_lat: read_f64(&mut r)?,
        origin_lon: read_f64(&mut r)?,
        nodata_value: -9999.0,
    };
    header.validate()?;
    let mut buf = vec![0u8; header.len() * 4];
    let mut bands: [Vec<f32>; N_BANDS] = Default::default();
    for band in bands.iter_mut() {
        r.read_exact(&mut buf)?;
        *band = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(RasterError::Format("trailing bytes after last band".into()));
    }
    BandStack::new(header, bands)
}

pub fn write_bandstack(stack: &BandStack, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let h = stack.header();
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| RasterError::Dimension(format!("{v} exceeds u32")))
    };
    w.write_all(BGRD_MAGIC)?;
    w.write_all(&BGRD_VERSION.to_le_bytes())?;
    w.write_all(&dim(h.n_rows)?.to_le_bytes())?;
    w.write_all(&dim(h.n_cols)?.to_le_bytes())?;
    w.write_all(&(N_BANDS as u32).to_le_bytes())?;
    w.write_all(&h.cell_size.to_le_bytes())?;
    w.write_all(&h.origin_lat.to_le_bytes())?;
    w.write_all(&h.origin_lon.to_le_bytes())?;
    for band in stack.bands() {
        for v in band {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}
