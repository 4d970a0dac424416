//! `FEF1` field container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FEF1"  u32 nx  u32 ny  u32 n_channels  u32 n_masks
//! n_channels x { u16 name_len, name (UTF-8), nx*ny f32 }
//! n_masks    x { u16 name_len, name (UTF-8), nx*ny u8 }
//! ```
//!
//! Planes use the grid storage order (`index = ix * ny + iy`).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::grid::{Field2D, GridSpec, Unit};
use crate::oracle::{FieldBundle, Masks, CHANNEL_NAMES};

pub const FEF_MAGIC: &[u8; 4] = b"FEF1";

/// Raw contents of a `FEF1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct FefFile {
    pub nx: usize,
    pub ny: usize,
    pub channels: Vec<(String, Vec<f32>)>,
    pub masks: Vec<(String, Vec<u8>)>,
}

fn put_name(out: &mut Vec<u8>, name: &str) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("plane name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated container: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("plane name is not UTF-8".into()))
    }
}

impl FefFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cells = self.nx * self.ny;
        let mut out = Vec::with_capacity(20 + self.channels.len() * (cells * 4 + 16) + self.masks.len() * (cells + 16));
        out.extend_from_slice(FEF_MAGIC);
        for v in [self.nx, self.ny, self.channels.len(), self.masks.len()] {
            let v = u32::try_from(v).map_err(|_| Error::Format(format!("header value {v} exceeds u32")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (name, values) in &self.channels {
            if values.len() != cells {
                return Err(Error::Format(format!("channel {name} has {} values, expected {cells}", values.len())));
            }
            put_name(&mut out, name)?;
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for (name, plane) in &self.masks {
            if plane.len() != cells {
                return Err(Error::Format(format!("mask {name} has {} values, expected {cells}", plane.len())));
            }
            put_name(&mut out, name)?;
            out.extend_from_slice(plane);
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != FEF_MAGIC {
            return Err(Error::Format("bad magic, expected FEF1".into()));
        }
        let nx = r.u32()? as usize;
        let ny = r.u32()? as usize;
        let n_channels = r.u32()? as usize;
        let n_masks = r.u32()? as usize;
        let cells = nx
            .checked_mul(ny)
            .filter(|c| c.checked_mul(4).is_some_and(|b| b <= buf.len()))
            .ok_or_else(|| Error::Format(format!("grid {nx}x{ny} does not fit in {} bytes", buf.len())))?;
        let mut channels = Vec::with_capacity(n_channels.min(64));
        for _ in 0..n_channels {
            let name = r.name()?;
            let raw = r.take(cells * 4)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            channels.push((name, values));
        }
        let mut masks = Vec::with_capacity(n_masks.min(64));
        for _ in 0..n_masks {
            let name = r.name()?;
            masks.push((name, r.take(cells)?.to_vec()));
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes after last plane", buf.len() - r.pos)));
        }
        Ok(Self { nx, ny, channels, masks })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn channel(&self, name: &str) -> Option<&[f32]> {
        self.channels.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn mask(&self, name: &str) -> Option<&[u8]> {
        self.masks.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Stores a bundle; values are rounded to `f32`.
    pub fn from_bundle(bundle: &FieldBundle) -> Self {
        let g = bundle.grid();
        Self {
            nx: g.nx,
            ny: g.ny,
            channels: CHANNEL_NAMES
                .iter()
                .zip(bundle.channels())
                .map(|(n, f)| (n.to_string(), f.values.iter().map(|&v| v as f32).collect()))
                .collect(),
            masks: Masks::NAMES
                .iter()
                .zip(bundle.masks.planes())
                .map(|(n, p)| (n.to_string(), p.clone()))
                .collect(),
        }
    }

    /// Rebuilds a bundle on `grid`, which supplies the cell sizes the file
    /// does not carry.
    pub fn to_bundle(&self, grid: GridSpec) -> Result<FieldBundle> {
        if grid.nx != self.nx || grid.ny != self.ny {
            return Err(Error::Format(format!(
                "container is {}x{}, grid is {}x{}",
                self.nx, self.ny, grid.nx, grid.ny
            )));
        }
        let units = [
            Unit::Volt,
            Unit::CoulombPerM2,
            Unit::CoulombPerM3,
            Unit::CoulombPerM3,
            Unit::Log10AmperePerM2,
        ];
        let mut channels = Vec::with_capacity(5);
        for (name, unit) in CHANNEL_NAMES.iter().zip(units) {
            let v = self.channel(name).ok_or_else(|| Error::Format(format!("missing channel {name}")))?;
            channels.push(Field2D::from_values(grid, unit, v.iter().map(|&x| x as f64).collect())?);
        }
        let mut planes = Vec::with_capacity(5);
        for name in Masks::NAMES {
            let m = self.mask(name).ok_or_else(|| Error::Format(format!("missing mask {name}")))?;
            planes.push(m.to_vec());
        }
        FieldBundle::from_channels(channels, Masks::from_planes(planes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FefFile {
        FefFile {
            nx: 8,
            ny: 8,
            channels: vec![
                ("a".into(), (0..64).map(|i| i as f32 * 0.37 - 3.0).collect()),
                ("b".into(), (0..64).map(|i| f32::from_bits(0x3f80_0000 + i)).collect()),
            ],
            masks: vec![("m".into(), (0..64).map(|i| (i % 2) as u8).collect())],
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"FEF1");
        assert_eq!(&bytes[4..8], &8u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1u32.to_le_bytes());
        assert_eq!(&bytes[20..22], &1u16.to_le_bytes());
        assert_eq!(bytes[22], b'a');
        assert_eq!(&bytes[23..27], &(-3.0f32).to_le_bytes());
        assert_eq!(bytes.len(), 20 + 2 * (3 + 256) + (3 + 64));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let f = sample();
        let bytes = f.to_bytes().unwrap();
        let back = FefFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(FefFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(FefFile::from_bytes(&bad).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(FefFile::from_bytes(&long).is_err());
        let mut huge = bytes;
        huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(FefFile::from_bytes(&huge), Err(Error::Format(_))));
    }

    #[test]
    fn mismatched_plane_length_is_rejected() {
        let mut f = sample();
        f.channels[0].1.pop();
        assert!(f.to_bytes().is_err());
    }
}
