//! CMF1 binary matrix format.
//!
//! Layout: bytes 0-3 ASCII `CMF1`, bytes 4-7 row count (u32 LE), bytes 8-11
//! column count (u32 LE), then `rows * cols` IEEE-754 f32 LE values in
//! row-major order. Values are widened to f64 on load; saving a loaded matrix
//! reproduces the stored 32-bit values bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CMF1";

pub fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(m.rows() as u32).to_le_bytes())?;
    w.write_all(&(m.cols() as u32).to_le_bytes())?;
    for &v in m.as_slice() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| {
        Error::Format(format!("{}: file shorter than CMF1 header", path.display()))
    })?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected \"CMF1\"",
            path.display(),
            magic
        )));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let rows = u32::from_le_bytes(buf4) as usize;
    r.read_exact(&mut buf4)?;
    let cols = u32::from_le_bytes(buf4) as usize;

    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format(format!("{}: dimension overflow", path.display())))?;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(|_| {
        Error::Format(format!(
            "{}: truncated payload, expected {} f32 values",
            path.display(),
            n
        ))
    })?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format(format!(
            "{}: trailing bytes after {}x{} payload",
            path.display(),
            rows,
            cols
        )));
    }

    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(DenseMatrix::from_vec(rows, cols, data))
}
