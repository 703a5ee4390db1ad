//! Binary persistence for grid value tables.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"SLACGRID"                  8 bytes
//! version                      u32 (= 1)
//! ndim                         u32
//! per axis: lo f64, hi f64, nodes u64, periodic u8
//! dt f64, mu f64
//! n_controls u64, control_dim u64, controls f64 * n_controls * control_dim
//! n_values u64, values f64 * n_values   (row-major, last axis fastest)
//! ```

use std::io::Read;
use std::path::Path;

use super::{GridAxis, GridValueFunction};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

const MAGIC: &[u8; 8] = b"SLACGRID";
const VERSION: u32 = 1;

pub fn encode(g: &GridValueFunction) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * g.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(g.axes.len() as u32).to_le_bytes());
    for a in &g.axes {
        out.extend_from_slice(&a.lo.to_le_bytes());
        out.extend_from_slice(&a.hi.to_le_bytes());
        out.extend_from_slice(&(a.nodes as u64).to_le_bytes());
        out.push(a.periodic as u8);
    }
    out.extend_from_slice(&g.dt.to_le_bytes());
    out.extend_from_slice(&g.mu.to_le_bytes());
    let cdim = g.controls.first().map_or(0, Vec::len);
    out.extend_from_slice(&(g.controls.len() as u64).to_le_bytes());
    out.extend_from_slice(&(cdim as u64).to_le_bytes());
    for v in g.controls.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(g.values.len() as u64).to_le_bytes());
    for v in &g.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0
            .read_exact(&mut buf)
            .map_err(|_| Error::Format("truncated grid file".into()))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.take()?)).map_err(|_| Error::Format("length overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.0.len() < n.saturating_mul(8) {
            return Err(Error::Format("truncated grid file".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn decode(bytes: &[u8]) -> Result<GridValueFunction> {
    let mut r = Reader(bytes);
    if &r.take::<8>()? != MAGIC {
        return Err(Error::Format("not a grid value file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported grid file version {version}")));
    }
    let ndim = r.u32()? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::Format(format!("bad grid dimension {ndim}")));
    }
    let mut axes = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let lo = r.f64()?;
        let hi = r.f64()?;
        let nodes = r.u64()?;
        let periodic = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("bad periodic flag {b}"))),
        };
        let axis = GridAxis { lo, hi, nodes, periodic };
        axis.validate().map_err(|e| Error::Format(e.to_string()))?;
        axes.push(axis);
    }
    let dt = r.f64()?;
    let mu = r.f64()?;
    let nc = r.u64()?;
    let cdim = r.u64()?;
    let flat = r.f64s(nc.saturating_mul(cdim))?;
    let controls = if cdim == 0 {
        vec![Vec::new(); nc]
    } else {
        flat.chunks(cdim).map(<[f64]>::to_vec).collect()
    };
    let n = r.u64()?;
    let expected = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.nodes));
    if expected != Some(n) {
        return Err(Error::Format(format!("value count {n} does not match the axes")));
    }
    let values = r.f64s(n)?;
    if !r.0.is_empty() {
        return Err(Error::Format("trailing bytes in grid file".into()));
    }
    Ok(GridValueFunction {
        axes,
        values,
        dt,
        mu,
        controls,
    })
}

pub fn save_grid(path: &Path, g: &GridValueFunction) -> Result<()> {
    write_atomic(path, &encode(g))
}

pub fn load_grid(path: &Path) -> Result<GridValueFunction> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GridValueFunction {
        let axes = vec![GridAxis::new(-1.0, 1.0, 3), GridAxis::periodic(0.0, 6.0, 4)];
        GridValueFunction {
            axes,
            values: (0..12).map(|i| i as f64 / 7.0).collect(),
            dt: 0.05,
            mu: 0.5,
            controls: vec![vec![-1.0], vec![0.0], vec![1.0]],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let g = sample();
        assert_eq!(decode(&encode(&g)).unwrap(), g);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.grid");
        save_grid(&path, &g).unwrap();
        assert_eq!(load_grid(&path).unwrap(), g);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode(&sample());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        assert!(decode(&[]).is_err());
    }
}
