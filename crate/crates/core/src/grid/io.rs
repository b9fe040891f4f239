//! Field file formats.
//!
//! Binary layout (all little-endian):
//!
//! | bytes            | content                               |
//! |------------------|---------------------------------------|
//! | 6                | magic `NSCHF1`                        |
//! | 4                | `u32` dimension (1 or 2)              |
//! | 8 * dim          | `u64` cells per axis                  |
//! | 8 * dim          | `f64` spacing per axis                |
//! | 8 * n_cells      | `f64` values, row-major, x fastest    |

use std::io::{Read, Write};

use super::{Grid, ScalarBc, ScalarField};
use crate::error::{Error, Result};
use crate::real::Real;

pub const FIELD_MAGIC: &[u8; 6] = b"NSCHF1";

pub fn write_scalar_binary<T: Real, W: Write>(field: &ScalarField<T>, mut w: W) -> Result<()> {
    w.write_all(FIELD_MAGIC)?;
    write_grid(field.grid(), &mut w)?;
    write_values(field.values(), &mut w)
}

/// Dimension, cells per axis and spacing.
pub(crate) fn write_grid<T: Real, W: Write>(g: &Grid<T>, w: &mut W) -> Result<()> {
    w.write_all(&(g.dim() as u32).to_le_bytes())?;
    for &n in g.cells_per_axis() {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for &h in g.spacing() {
        w.write_all(&h.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn write_values<T: Real, W: Write>(values: &[T], w: &mut W) -> Result<()> {
    for &v in values {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_values<T: Real, R: Read>(n: usize, r: &mut R) -> Result<Vec<T>> {
    (0..n).map(|_| Ok(T::lit(read_f64(r)?))).collect()
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Reads a binary field file; the result is tagged Neumann-zero.
pub fn read_scalar_binary<T: Real, R: Read>(mut r: R) -> Result<ScalarField<T>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::Format("bad field magic".into()));
    }
    let grid = read_grid(&mut r)?;
    let values = read_values(grid.n_cells(), &mut r)?;
    ScalarField::new(grid, values, ScalarBc::NeumannZero)
}

pub(crate) fn read_grid<T: Real, R: Read>(r: &mut R) -> Result<Grid<T>> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    if !(1..=2).contains(&dim) {
        return Err(Error::Format(format!("unsupported dimension {dim}")));
    }
    let mut cells = Vec::with_capacity(dim);
    for _ in 0..dim {
        cells.push(read_u64(r)? as usize);
    }
    let mut lengths = Vec::with_capacity(dim);
    for &n in &cells {
        let h = read_f64(r)?;
        lengths.push(T::lit(h * n as f64));
    }
    Grid::new(&cells, &lengths)
}

/// One row per cell: coordinates then value.
pub fn write_scalar_csv<T: Real, W: Write>(field: &ScalarField<T>, mut w: W) -> Result<()> {
    let g = field.grid();
    if g.dim() == 1 {
        writeln!(w, "x,value")?;
    } else {
        writeln!(w, "x,y,value")?;
    }
    for (k, v) in field.values().iter().enumerate() {
        let [x, y] = g.cell_center_of(k);
        if g.dim() == 1 {
            writeln!(w, "{},{}", x.to_f64_lossy(), v.to_f64_lossy())?;
        } else {
            writeln!(w, "{},{},{}", x.to_f64_lossy(), y.to_f64_lossy(), v.to_f64_lossy())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_header_layout() {
        let g = Grid::new_2d([3, 2], [1.5, 1.0]).unwrap();
        let f = ScalarField::from_fn(g, ScalarBc::NeumannZero, |x, y| x + 10.0 * y);
        let mut buf = Vec::new();
        write_scalar_binary(&f, &mut buf).unwrap();
        assert_eq!(&buf[..6], b"NSCHF1");
        assert_eq!(u32::from_le_bytes(buf[6..10].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[10..18].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[18..26].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[26..34].try_into().unwrap()), 0.5);
        assert_eq!(buf.len(), 6 + 4 + 16 + 16 + 8 * 6);
        // second value is cell (1, 0): x fastest, value x + 10 y
        let v1 = f64::from_le_bytes(buf[50..58].try_into().unwrap());
        assert_eq!(v1, 3.25);
        let back: ScalarField<f64> = read_scalar_binary(&buf[..]).unwrap();
        assert_eq!(back.values(), f.values());
    }

    #[test]
    fn rejects_wrong_magic() {
        let buf = b"NOPE01\x01\x00\x00\x00".to_vec();
        assert!(read_scalar_binary::<f64, _>(&buf[..]).is_err());
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let g = Grid::new_1d(4, 1.0).unwrap();
        let f = ScalarField::constant(g, 2.0, ScalarBc::NeumannZero);
        let mut out = Vec::new();
        write_scalar_csv(&f, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().nth(1).unwrap(), "0.125,2");
    }
}
