//! Field dumps: a flat little-endian `f64` array in C order
//! `(t, x, y, z, component)` plus a JSON sidecar `<name>.json` holding
//! `{shape, grid, field_kind, checksum}`. The checksum is the SHA-256 of the
//! binary file. Tensor components are stored as `xx, yy, zz, xy, xz, yz`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grid::{Grid, GridSpec};
use super::timeseries::TimeSeries;
use super::types::GridField;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DumpHeader {
    pub shape: Vec<usize>,
    pub grid: Grid,
    pub t_end: Option<f64>,
    pub field_kind: String,
    pub checksum: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn encode<F: GridField>(slices: &[&F]) -> Vec<u8> {
    let nc = F::ncomp();
    let len = slices[0].grid().len();
    let mut out = Vec::with_capacity(slices.len() * len * nc * 8);
    for s in slices {
        let comps = s.comps();
        for p in 0..len {
            for c in comps.iter().take(nc) {
                out.extend_from_slice(&c[p].to_le_bytes());
            }
        }
    }
    out
}

fn decode<F: GridField>(bytes: &[u8], grid: Grid, count: usize) -> Result<Vec<F>> {
    let nc = F::ncomp();
    let len = grid.len();
    if bytes.len() != count * len * nc * 8 {
        return Err(Error::Dump(format!(
            "expected {} bytes, found {}",
            count * len * nc * 8,
            bytes.len()
        )));
    }
    let mut vals = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut comps = vec![vec![0.0; len]; nc];
        for p in 0..len {
            for c in comps.iter_mut() {
                c[p] = vals.next().unwrap();
            }
        }
        out.push(F::from_comps(grid, comps));
    }
    Ok(out)
}

fn write(path: &Path, bytes: &[u8], header: &DumpHeader) -> Result<()> {
    fs::write(path, bytes)?;
    fs::write(sidecar(path), serde_json::to_string_pretty(header)?)?;
    Ok(())
}

/// Writes a time series; returns the checksum.
pub fn write_series<F: GridField>(path: &Path, series: &TimeSeries<F>) -> Result<String> {
    let refs: Vec<&F> = series.slices.iter().collect();
    let bytes = encode(&refs);
    let grid = series.slices[0].grid();
    let checksum = sha256_hex(&bytes);
    let header = DumpHeader {
        shape: vec![series.slices.len(), grid.n, grid.n, grid.n, F::ncomp()],
        grid,
        t_end: Some(series.t_end),
        field_kind: F::kind().to_string(),
        checksum: checksum.clone(),
    };
    write(path, &bytes, &header)?;
    Ok(checksum)
}

/// Writes a single field as a one-slice dump.
pub fn write_field<F: GridField>(path: &Path, field: &F) -> Result<String> {
    let bytes = encode(&[field]);
    let grid = field.grid();
    let checksum = sha256_hex(&bytes);
    let header = DumpHeader {
        shape: vec![1, grid.n, grid.n, grid.n, F::ncomp()],
        grid,
        t_end: None,
        field_kind: F::kind().to_string(),
        checksum: checksum.clone(),
    };
    write(path, &bytes, &header)?;
    Ok(checksum)
}

pub fn read_header(path: &Path) -> Result<DumpHeader> {
    let text = fs::read_to_string(sidecar(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_checked<F: GridField>(path: &Path) -> Result<(DumpHeader, Vec<F>)> {
    let header = read_header(path)?;
    if header.field_kind != F::kind() {
        return Err(Error::Dump(format!(
            "{} holds {}, expected {}",
            path.display(),
            header.field_kind,
            F::kind()
        )));
    }
    let bytes = fs::read(path)?;
    if sha256_hex(&bytes) != header.checksum {
        return Err(Error::Checksum(path.display().to_string()));
    }
    let count = header.shape.first().copied().unwrap_or(0);
    let slices = decode::<F>(&bytes, header.grid, count)?;
    Ok((header, slices))
}

pub fn read_series<F: GridField>(path: &Path) -> Result<TimeSeries<F>> {
    let (header, slices) = read_checked::<F>(path)?;
    let t_end = header
        .t_end
        .ok_or_else(|| Error::Dump("dump has no time axis".into()))?;
    if slices.len() < 2 {
        return Err(Error::Dump("time series needs at least two slices".into()));
    }
    Ok(TimeSeries::new(t_end, slices))
}

pub fn read_field<F: GridField>(path: &Path) -> Result<F> {
    let (_, mut slices) = read_checked::<F>(path)?;
    if slices.len() != 1 {
        return Err(Error::Dump(format!(
            "expected one slice, found {}",
            slices.len()
        )));
    }
    Ok(slices.pop().unwrap())
}

/// Grid spec of a series dump.
pub fn series_spec(path: &Path) -> Result<GridSpec> {
    let h = read_header(path)?;
    let t_end = h
        .t_end
        .ok_or_else(|| Error::Dump("dump has no time axis".into()))?;
    Ok(GridSpec {
        grid: h.grid,
        t_end,
        n_t: h.shape[0] - 1,
    })
}
