//! PULS1 binary snapshots of a [`RealField`].
//!
//! Layout (all little-endian): magic `PULS`, `u32` version = 1, `u32` d,
//! `u32` n, `f64` L, then `n^d` `f64` samples in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{PulseError, Result};
use crate::grid::{GridSpec, RealField};

pub const MAGIC: &[u8; 4] = b"PULS";
pub const VERSION: u32 = 1;

pub fn write_field<W: Write>(mut out: W, field: &RealField) -> Result<()> {
    let grid = field.grid();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(grid.dim() as u32).to_le_bytes())?;
    out.write_all(&(grid.points_per_axis() as u32).to_le_bytes())?;
    out.write_all(&grid.half_period().to_le_bytes())?;
    for v in field.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_field<R: Read>(mut input: R) -> Result<RealField> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PulseError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(PulseError::Format(format!("unsupported version {version}")));
    }
    let d = read_u32(&mut input)? as usize;
    let n = read_u32(&mut input)? as usize;
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    let half_period = f64::from_le_bytes(buf);
    let grid = GridSpec::new(d, n, half_period)
        .map_err(|e| PulseError::Format(format!("header describes an invalid grid: {e}")))?;

    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        input
            .read_exact(&mut buf)
            .map_err(|_| PulseError::Format("truncated sample block".into()))?;
        values.push(f64::from_le_bytes(buf));
    }
    let mut probe = [0u8; 1];
    if input.read(&mut probe)? != 0 {
        return Err(PulseError::Format("trailing bytes after samples".into()));
    }
    RealField::new(&grid, values)
}

pub fn save(path: impl AsRef<Path>, field: &RealField) -> Result<()> {
    write_field(BufWriter::new(File::create(path)?), field)
}

pub fn load(path: impl AsRef<Path>) -> Result<RealField> {
    read_field(BufReader::new(File::open(path)?))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn header_layout_is_bit_exact() {
        let g = make_grid(2, 8, 1.5).unwrap();
        let f = RealField::from_fn(&g, |x| x[0] - 2.0 * x[1]);
        let mut bytes = Vec::new();
        write_field(&mut bytes, &f).unwrap();
        assert_eq!(bytes.len(), 4 + 4 * 3 + 8 + 64 * 8);
        assert_eq!(&bytes[0..4], b"PULS");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[8, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &1.5f64.to_le_bytes());
        assert_eq!(&bytes[24..32], &f.values()[0].to_le_bytes());
        let back = read_field(bytes.as_slice()).unwrap();
        assert_eq!(back.values(), f.values());
        assert_eq!(back.grid(), f.grid());
    }

    #[test]
    fn rejects_corrupt_input() {
        let g = make_grid(2, 8, 1.0).unwrap();
        let mut bytes = Vec::new();
        write_field(&mut bytes, &RealField::zeros(&g)).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_field(bad.as_slice()), Err(PulseError::Format(_))));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(read_field(bad.as_slice()), Err(PulseError::Format(_))));

        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(read_field(short), Err(PulseError::Format(_))));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(read_field(long.as_slice()), Err(PulseError::Format(_))));
    }
}
