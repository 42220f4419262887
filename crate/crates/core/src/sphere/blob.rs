//! Flat binary blobs: a 16-byte header (4-byte magic, little-endian `u32`
//! resolution, `u32` channel count, `u32` zero padding) followed by `f32`
//! little-endian values in storage order (sample-major, channels interleaved).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::so3::so3_grid;

use super::{dh_grid, RotationGridSignal, SphericalSignal};

pub(crate) const SPHERE_MAGIC: &[u8; 4] = b"SPH1";
pub(crate) const SO3_MAGIC: &[u8; 4] = b"SO31";

pub(crate) fn write_blob<W: Write>(w: &mut W, magic: &[u8; 4], res: usize, k: usize, values: &[f64]) -> Result<()> {
    let io = |e| Error::Io { path: "<blob>".into(), source: e };
    w.write_all(magic).map_err(io)?;
    for v in [res as u32, k as u32, 0u32] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend((*v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(io)
}

pub(crate) fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<(usize, usize)> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(|_| Error::invalid("truncated blob header"))?;
    if &head[..4] != magic {
        return Err(Error::invalid(format!(
            "bad blob magic {:?}, expected {:?}",
            String::from_utf8_lossy(&head[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let u = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap()) as usize;
    Ok((u(4), u(8)))
}

pub(crate) fn read_values<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|_| Error::invalid(format!("blob body shorter than {n} values")))?;
    Ok(buf.chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
}

pub fn write_spherical_signal<W: Write>(w: &mut W, s: &SphericalSignal) -> Result<()> {
    write_blob(w, SPHERE_MAGIC, s.grid().bandwidth(), s.channels(), s.values())
}

pub fn read_spherical_signal<R: Read>(r: &mut R) -> Result<SphericalSignal> {
    let (b, k) = read_header(r, SPHERE_MAGIC)?;
    let grid = dh_grid(b)?;
    let values = read_values(r, grid.len() * k)?;
    SphericalSignal::new(grid, k, values)
}

/// Only cubic grids (`n_alpha = n_beta = n_gamma`) are representable.
pub fn write_rotation_signal<W: Write>(w: &mut W, s: &RotationGridSignal) -> Result<()> {
    let n = s.grid().n().ok_or_else(|| Error::invalid("only cubic rotation grids can be serialized"))?;
    write_blob(w, SO3_MAGIC, n, s.channels(), s.values())
}

pub fn read_rotation_signal<R: Read>(r: &mut R) -> Result<RotationGridSignal> {
    let (n, k) = read_header(r, SO3_MAGIC)?;
    let grid = so3_grid(n)?;
    let values = read_values(r, grid.len() * k)?;
    RotationGridSignal::new(grid, k, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let s = SphericalSignal::constant(dh_grid(3).unwrap(), 2, 0.5);
        let mut buf = Vec::new();
        write_spherical_signal(&mut buf, &s).unwrap();
        assert_eq!(&buf[..4], b"SPH1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 16 + 36 * 2 * 4);
        let back = read_spherical_signal(&mut buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rotation_blob_roundtrip_and_errors() {
        let s = RotationGridSignal::from_fn(so3_grid(3).unwrap(), 1, |r, o| o[0] = r.trace() as f32 as f64);
        let mut buf = Vec::new();
        write_rotation_signal(&mut buf, &s).unwrap();
        assert_eq!(&buf[..4], b"SO31");
        assert_eq!(read_rotation_signal(&mut buf.as_slice()).unwrap(), s);
        assert!(read_spherical_signal(&mut buf.as_slice()).is_err());
        assert!(read_rotation_signal(&mut &buf[..20]).is_err());
    }
}
