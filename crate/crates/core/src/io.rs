//! Binary array dumps and CSV table emission.
//!
//! Dump format: 8-byte header (magic `QMFD`, version u16, rank u16), then
//! rank×u32 dimensions, then little-endian complex float64 pairs in
//! row-major order. For a rank-2 array the header block is 16 bytes.

use crate::scalar::{Cx, Real};
use crate::{Error, Result};
use ndarray::Array2;
use std::io::{Read as _, Write as _};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"QMFD";
pub const VERSION: u16 = 1;

/// Write a complex array with explicit dimensions.
pub fn write_complex_array<R: Real>(path: &Path, dims: &[u32], data: &[Cx<R>]) -> Result<()> {
    let expect: usize = dims.iter().map(|&d| d as usize).product();
    if expect != data.len() {
        return Err(Error::SizeMismatch(format!(
            "dims describe {expect} entries, data has {}",
            data.len()
        )));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(dims.len() as u16).to_le_bytes())?;
    for &d in dims {
        f.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(data.len() * 16);
    for c in data {
        buf.extend_from_slice(&c.re.to_f64().unwrap_or(f64::NAN).to_le_bytes());
        buf.extend_from_slice(&c.im.to_f64().unwrap_or(f64::NAN).to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

/// Read a dump back (always as f64 pairs).
pub fn read_complex_array(path: &Path) -> Result<(Vec<u32>, Vec<Cx<f64>>)> {
    let mut f = std::fs::File::open(path)?;
    let mut head = [0u8; 8];
    f.read_exact(&mut head)?;
    if &head[0..4] != MAGIC {
        return Err(Error::InvalidGrid("bad magic in array dump".into()));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(Error::InvalidGrid(format!(
            "unsupported dump version {version}"
        )));
    }
    let rank = u16::from_le_bytes([head[6], head[7]]) as usize;
    let mut dims = vec![0u32; rank];
    for d in dims.iter_mut() {
        let mut b = [0u8; 4];
        f.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b);
    }
    let count: usize = dims.iter().map(|&d| d as usize).product();
    let mut buf = vec![0u8; count * 16];
    f.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(16)
        .map(|c| {
            Cx::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            )
        })
        .collect();
    Ok((dims, data))
}

/// Dump a dense matrix (rank 2).
pub fn write_matrix<R: Real>(path: &Path, m: &Array2<Cx<R>>) -> Result<()> {
    let dims = [m.nrows() as u32, m.ncols() as u32];
    let data: Vec<Cx<R>> = m.iter().copied().collect();
    write_complex_array(path, &dims, &data)
}

/// Minimal deterministic CSV table.
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "CSV row width mismatch");
        self.rows.push(row);
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Shortest-roundtrip decimal formatting (deterministic on one platform).
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_roundtrip_and_header_layout() {
        let dir = std::env::temp_dir().join("qmfd_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.qmfd");
        let mut m: Array2<Cx<f64>> = Array2::zeros((2, 3));
        for (i, v) in m.iter_mut().enumerate() {
            *v = Cx::new(i as f64, -(i as f64) * 0.5);
        }
        write_matrix(&path, &m).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"QMFD");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 2); // rank
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2u32);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3u32);
        // 16-byte header block for rank 2, then payload
        assert_eq!(bytes.len(), 16 + 6 * 16);

        let (dims, data) = read_complex_array(&path).unwrap();
        assert_eq!(dims, vec![2, 3]);
        for (i, v) in data.iter().enumerate() {
            assert_eq!(v.re, i as f64);
            assert_eq!(v.im, -(i as f64) * 0.5);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_is_deterministic() {
        let dir = std::env::temp_dir().join("qmfd_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.csv");
        let p2 = dir.join("b.csv");
        for p in [&p1, &p2] {
            let mut t = CsvTable::new(&["x", "y"]);
            t.push(vec![fmt_f64(1.0 / 3.0), fmt_f64(2.5e-17)]);
            t.write_to(p).unwrap();
        }
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }
}
