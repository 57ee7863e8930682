//! MHDF field dumps: "MHDF", then u32 version, n, points_per_axis, component
//! count (little-endian), then f64 little-endian values in row-major lattice
//! order with components innermost. Points outside the stored support are
//! written as zeros.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::FieldGrid;
use crate::error::{Error, Result};

pub const MHDF_MAGIC: &[u8; 4] = b"MHDF";
pub const MHDF_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MhdfData {
    pub n: usize,
    pub points_per_axis: usize,
    pub comps: usize,
    pub values: Vec<f64>,
}

fn write_header(w: &mut impl Write, n: usize, points: usize, comps: usize) -> Result<()> {
    w.write_all(MHDF_MAGIC)?;
    for v in [MHDF_VERSION, n as u32, points as u32, comps as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_mhdf(path: &Path, g: &FieldGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, g.spec.n, g.spec.points_per_axis, g.comps)?;
    let zero = vec![0.0; g.comps];
    for idx in 0..g.spec.lattice_size() {
        for v in g.at(idx).unwrap_or(&zero) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Same header with `points` records of `comps` values each, for data that
/// is not a lattice (atom lists).
pub fn write_mhdf_records(path: &Path, n: usize, points: usize, comps: usize, values: &[f64]) -> Result<()> {
    if values.len() != points * comps {
        return Err(Error::Format(format!("{} values for {points} records of {comps}", values.len())));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, n, points, comps)?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a record dump written by `write_mhdf_records`.
pub fn read_mhdf_records(path: &Path) -> Result<MhdfData> {
    read_with(path, |_, p, comps| (p as usize).checked_mul(comps as usize))
}

pub fn read_mhdf(path: &Path) -> Result<MhdfData> {
    read_with(path, |n, p, comps| (p as usize).checked_pow(n + 1).and_then(|s| s.checked_mul(comps as usize)))
}

fn read_with(path: &Path, count: impl Fn(u32, u32, u32) -> Option<usize>) -> Result<MhdfData> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MHDF_MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let mut word = [0u8; 4];
    let mut header = [0u32; 4];
    for h in header.iter_mut() {
        r.read_exact(&mut word)?;
        *h = u32::from_le_bytes(word);
    }
    let [version, n, p, comps] = header;
    if version != MHDF_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = count(n, p, comps).ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!("expected {} value bytes, found {}", count * 8, bytes.len())));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(MhdfData { n: n as usize, points_per_axis: p as usize, comps: comps as usize, values })
}
