//! Binary field snapshots.
//!
//! Layout (all integers little-endian):
//! * magic bytes `SHOMv1`
//! * `u8` dimension, `u8` reserved
//! * `u32 x 3` grid points per axis, `f64 x 3` extents (grid header)
//! * `u32` number of named arrays, then per array:
//!   `u16` name length, name (UTF-8), `u8` rank, `u64 x rank` dims,
//!   `f64` data, row-major.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"SHOMv1";

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad snapshot format: {0}")]
    Format(String),
}

/// A named collection of row-major f64 arrays plus grid metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Snapshot {
    pub dim: u8,
    pub axes: [u32; 3],
    pub extent: [f64; 3],
    pub arrays: BTreeMap<String, (Vec<u64>, Vec<f64>)>,
}

impl Snapshot {
    pub fn new(dim: usize, axes: [usize; 3], extent: [f64; 3]) -> Self {
        Snapshot {
            dim: dim as u8,
            axes: [axes[0] as u32, axes[1] as u32, axes[2] as u32],
            extent,
            arrays: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, dims: Vec<u64>, data: Vec<f64>) {
        debug_assert_eq!(
            dims.iter().product::<u64>() as usize,
            data.len(),
            "array dims must match data length"
        );
        self.arrays.insert(name.to_string(), (dims, data));
    }

    pub fn get(&self, name: &str) -> Option<&(Vec<u64>, Vec<f64>)> {
        self.arrays.get(name)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), SnapshotError> {
        w.write_all(MAGIC)?;
        w.write_all(&[self.dim, 0u8])?;
        for a in self.axes {
            w.write_all(&a.to_le_bytes())?;
        }
        for e in self.extent {
            w.write_all(&e.to_le_bytes())?;
        }
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for (name, (dims, data)) in &self.arrays {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u16).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&[dims.len() as u8])?;
            for d in dims {
                w.write_all(&d.to_le_bytes())?;
            }
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, SnapshotError> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SnapshotError::Format(format!(
                "bad magic bytes {:?}",
                magic
            )));
        }
        let mut hdr = [0u8; 2];
        r.read_exact(&mut hdr)?;
        let dim = hdr[0];
        let mut axes = [0u32; 3];
        for a in axes.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *a = u32::from_le_bytes(b);
        }
        let mut extent = [0f64; 3];
        for e in extent.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *e = f64::from_le_bytes(b);
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let count = u32::from_le_bytes(b4);
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)?;
            let name_len = u16::from_le_bytes(b2) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| SnapshotError::Format(format!("bad array name: {e}")))?;
            let mut b1 = [0u8; 1];
            r.read_exact(&mut b1)?;
            let rank = b1[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b8 = [0u8; 8];
                r.read_exact(&mut b8)?;
                dims.push(u64::from_le_bytes(b8));
            }
            let total: u64 = dims.iter().product();
            let mut data = vec![0f64; total as usize];
            for v in data.iter_mut() {
                let mut b8 = [0u8; 8];
                r.read_exact(&mut b8)?;
                *v = f64::from_le_bytes(b8);
            }
            arrays.insert(name, (dims, data));
        }
        Ok(Snapshot {
            dim,
            axes,
            extent,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SnapshotError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        // Write-then-rename so readers never observe partial files.
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SnapshotError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bytes() {
        let mut s = Snapshot::new(2, [8, 8, 1], [1.0, 1.0, 0.0]);
        s.insert("p", vec![8, 8], (0..64).map(|i| i as f64 * 0.5).collect());
        s.insert("u0", vec![9, 8], vec![1.25; 72]);
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..6], MAGIC);
        let back = Snapshot::read_from(&mut &buf[..]).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache").join("field.snap");
        let mut s = Snapshot::new(3, [4, 4, 4], [1.0, 1.0, 1.0]);
        s.insert("x", vec![64], (0..64).map(|i| (i as f64).sin()).collect());
        s.save(&path).unwrap();
        let back = Snapshot::load(&path).unwrap();
        assert_eq!(s, back);
    }
}
