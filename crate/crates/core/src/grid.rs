//! Cell-centred scalar fields on the torus and their on-disk formats.
//!
//! Sample `(a, b)` sits at `((a + 1/2) / N, (b + 1/2) / N)` and is stored at
//! index `b * N + a`, so rows run along `x1`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("bad snapshot file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

const MAGIC: &[u8; 4] = b"TMXF";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    n: usize,
    values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    Linf,
}

/// Neumaier-compensated sum.
pub fn stable_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for v in it {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

impl GridField {
    pub fn zeros(n: usize) -> Self {
        GridField {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != n * n {
            return Err(GridError::SizeMismatch(n * n, values.len()));
        }
        Ok(GridField { n, values })
    }

    /// Samples `f` at the cell centres.
    pub fn from_fn<F: Fn(f64, f64) -> f64 + Sync>(n: usize, f: F) -> Self {
        let h = 1.0 / n as f64;
        let mut values = vec![0.0; n * n];
        values.par_chunks_mut(n).enumerate().for_each(|(b, row)| {
            let x2 = (b as f64 + 0.5) * h;
            for (a, v) in row.iter_mut().enumerate() {
                *v = f((a as f64 + 0.5) * h, x2);
            }
        });
        GridField { n, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.values[b * self.n + a]
    }

    pub fn cell_center(n: usize, a: usize, b: usize) -> (f64, f64) {
        let h = 1.0 / n as f64;
        ((a as f64 + 0.5) * h, (b as f64 + 0.5) * h)
    }

    /// Spatial mean.
    pub fn mass(&self) -> f64 {
        stable_sum(self.values.iter().copied()) / self.values.len() as f64
    }

    pub fn norm(&self, p: Norm) -> f64 {
        let len = self.values.len() as f64;
        match p {
            Norm::L1 => stable_sum(self.values.iter().map(|v| v.abs())) / len,
            Norm::L2 => (stable_sum(self.values.iter().map(|v| v * v)) / len).sqrt(),
            Norm::Linf => self.values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    pub fn variance(&self) -> f64 {
        let m = self.mass();
        stable_sum(self.values.iter().map(|v| (v - m) * (v - m))) / self.values.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn distance(&self, other: &GridField, p: Norm) -> Result<f64, GridError> {
        Ok(self.sub(other)?.norm(p))
    }

    pub fn sub(&self, other: &GridField) -> Result<GridField, GridError> {
        if self.n != other.n {
            return Err(GridError::SizeMismatch(self.n, other.n));
        }
        Ok(GridField {
            n: self.n,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn map<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> GridField {
        GridField {
            n: self.n,
            values: self.values.par_iter().map(|&v| f(v)).collect(),
        }
    }

    /// Mean over each of the `m x m` blocks of a `2^-j` partition.
    pub fn block_means(&self, blocks: usize) -> Result<Vec<f64>, GridError> {
        if blocks == 0 || self.n % blocks != 0 {
            return Err(GridError::Format(format!(
                "{blocks} blocks do not tile a grid of {}",
                self.n
            )));
        }
        let s = self.n / blocks;
        let mut out = vec![0.0; blocks * blocks];
        for bb in 0..blocks {
            for ba in 0..blocks {
                let mut acc = Vec::with_capacity(s * s);
                for b in bb * s..(bb + 1) * s {
                    acc.extend_from_slice(&self.values[b * self.n + ba * s..b * self.n + (ba + 1) * s]);
                }
                out[bb * blocks + ba] = stable_sum(acc) / (s * s) as f64;
            }
        }
        Ok(out)
    }

    pub fn write_tmxf<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_tmxf<R: Read>(mut r: R) -> Result<Self, GridError> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)?;
        if &head[0..4] != MAGIC {
            return Err(GridError::Format("missing TMXF magic".into()));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(GridError::Format(format!("unsupported version {version}")));
        }
        let n = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let mut bytes = vec![0u8; n * n * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(GridField { n, values })
    }

    pub fn save_tmxf(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_tmxf(&mut w)?;
        w.flush()
    }

    pub fn load_tmxf(path: &Path) -> Result<Self, GridError> {
        GridField::read_tmxf(BufReader::new(File::open(path)?))
    }

    /// One line per row of constant `x2`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for row in self.values.chunks(self.n) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_of_constant() {
        let g = GridField::from_fn(8, |_, _| -2.0);
        assert_eq!(g.mass(), -2.0);
        assert_eq!(g.norm(Norm::L1), 2.0);
        assert_eq!(g.norm(Norm::L2), 2.0);
        assert_eq!(g.norm(Norm::Linf), 2.0);
        assert_eq!(g.variance(), 0.0);
    }

    #[test]
    fn tmxf_round_trip() {
        let g = GridField::from_fn(5, |x, y| x * 3.0 - y);
        let mut buf = Vec::new();
        g.write_tmxf(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 25 * 8);
        assert_eq!(GridField::read_tmxf(&buf[..]).unwrap(), g);
        buf[0] = b'X';
        assert!(GridField::read_tmxf(&buf[..]).is_err());
    }

    #[test]
    fn block_means_of_linear() {
        let g = GridField::from_fn(4, |x, _| x);
        let m = g.block_means(2).unwrap();
        assert!((m[0] - 0.25).abs() < 1e-15 && (m[1] - 0.75).abs() < 1e-15);
    }
}
