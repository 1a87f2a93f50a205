//! Table export (CSV) and a flat binary dump for grid fields.
//!
//! Binary layout, all little-endian:
//!
//! | offset | size | content                                  |
//! |--------|------|------------------------------------------|
//! | 0      | 4    | magic `KRFD`                             |
//! | 4      | 4    | format version (`u32`, currently 1)      |
//! | 8      | 4    | kind (`u32`: 0 increment, 1 density)     |
//! | 12     | 4    | dimension `d` (`u32`)                    |
//! | 16     | 4    | nodes per axis `n` (`u32`)               |
//! | 20     | 4    | component count `c` (`u32`)              |
//! | 24     | 8    | box length `L` (`f64`)                   |
//! | 32     | 8    | `dt` for increments, time for densities  |
//! | 40     | ...  | `c * n^d` values (`f64`)                 |
//!
//! Values are component-major; within a component the last axis varies
//! fastest.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fieldsynth::FieldIncrement;
use crate::grid::Grid;
use crate::gridspde::DensityField;
use crate::moment2::ZField;

pub const MAGIC: &[u8; 4] = b"KRFD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpKind {
    Increment = 0,
    Density = 1,
}

/// Decoded binary dump.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub kind: DumpKind,
    pub grid: Grid,
    /// `dt` or time, depending on `kind`.
    pub scalar: f64,
    pub components: Vec<Vec<f64>>,
}

fn write_header<W: Write>(w: &mut W, kind: DumpKind, grid: &Grid, comps: usize, scalar: f64) -> Result<()> {
    w.write_all(MAGIC)?;
    for v in [VERSION, kind as u32, grid.dim as u32, grid.n as u32, comps as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&grid.length.to_le_bytes())?;
    w.write_all(&scalar.to_le_bytes())?;
    Ok(())
}

fn write_values<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_increment<W: Write>(w: &mut W, inc: &FieldIncrement) -> Result<()> {
    write_header(w, DumpKind::Increment, &inc.grid, inc.components().len(), inc.dt)?;
    for c in inc.components() {
        write_values(w, c)?;
    }
    Ok(())
}

pub fn write_density<W: Write>(w: &mut W, u: &DensityField) -> Result<()> {
    write_header(w, DumpKind::Density, &u.grid, 1, u.time)?;
    write_values(w, &u.values)
}

pub fn read_dump<R: Read>(r: &mut R) -> Result<FieldDump> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config("not a field dump (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    let mut next_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word))
    };
    let version = next_u32(r)?;
    if version != VERSION {
        return Err(Error::Config(format!("unsupported dump version {version}")));
    }
    let kind = match next_u32(r)? {
        0 => DumpKind::Increment,
        1 => DumpKind::Density,
        k => return Err(Error::Config(format!("unknown dump kind {k}"))),
    };
    let dim = next_u32(r)? as usize;
    let n = next_u32(r)? as usize;
    let comps = next_u32(r)? as usize;
    let mut dword = [0u8; 8];
    let mut next_f64 = |r: &mut R| -> Result<f64> {
        r.read_exact(&mut dword)?;
        Ok(f64::from_le_bytes(dword))
    };
    let length = next_f64(r)?;
    let scalar = next_f64(r)?;
    let grid = Grid::new(dim, n, length)?;
    let mut components = Vec::with_capacity(comps);
    for _ in 0..comps {
        let values = (0..grid.len()).map(|_| next_f64(r)).collect::<Result<Vec<_>>>()?;
        components.push(values);
    }
    Ok(FieldDump { kind, grid, scalar, components })
}

fn coordinate_headers(dim: usize) -> Vec<String> {
    ["x", "y", "z"].iter().take(dim).map(|s| s.to_string()).collect()
}

/// `x[, y, z], value` per node, at centered coordinates.
pub fn write_density_csv<W: Write>(w: W, u: &DensityField) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = coordinate_headers(u.grid.dim);
    header.push("value".into());
    out.write_record(&header)?;
    for (node, v) in u.values.iter().enumerate() {
        let x = u.grid.position(node);
        let mut row: Vec<String> = x[..u.grid.dim].iter().map(|c| c.to_string()).collect();
        row.push(v.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// `z..., value, reference, abs_error` per node.
pub fn write_zfield_csv<W: Write>(w: W, s: &ZField, reference: Option<&ZField>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["z1", "z2", "z3"].iter().take(s.grid.dim).map(|s| s.to_string()).collect();
    header.extend(["value", "reference", "abs_error"].map(String::from));
    out.write_record(&header)?;
    for (node, v) in s.values.iter().enumerate() {
        let x = s.grid.position(node);
        let mut row: Vec<String> = x[..s.grid.dim].iter().map(|c| c.to_string()).collect();
        row.push(v.to_string());
        match reference {
            Some(r) => {
                row.push(r.values[node].to_string());
                row.push((v - r.values[node]).abs().to_string());
            }
            None => row.extend([String::new(), String::new()]),
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Serializes any row type with named fields.
pub fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_rows_to<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_rows(std::fs::File::create(path)?, rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_round_trip() {
        let grid = Grid::new(2, 4, 2.0).unwrap();
        let u = DensityField::new(grid, (0..16).map(|i| i as f64 * 0.25).collect(), 1.5).unwrap();
        let mut buf = Vec::new();
        write_density(&mut buf, &u).unwrap();
        assert_eq!(buf.len(), 40 + 16 * 8);
        let back = read_dump(&mut buf.as_slice()).unwrap();
        assert_eq!(back.kind, DumpKind::Density);
        assert_eq!(back.grid, grid);
        assert_eq!(back.scalar, 1.5);
        assert_eq!(back.components[0], u.values);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let bytes = b"NOPE\x01\x00\x00\x00";
        assert!(read_dump(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn density_csv_has_one_row_per_node() {
        let grid = Grid::new(1, 8, 4.0).unwrap();
        let u = DensityField::constant(grid, 0.25, 0.0);
        let mut buf = Vec::new();
        write_density_csv(&mut buf, &u).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert_eq!(text.lines().next().unwrap(), "x,value");
    }
}
