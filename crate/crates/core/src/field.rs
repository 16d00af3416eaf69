use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Row-major field on a product grid; index `(i1, i2)` lives at `i1 * n2 + i2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field2 {
    n1: usize,
    n2: usize,
    data: Vec<f64>,
}

const DUMP_MAGIC: &[u8; 8] = b"LPF2F64L";

impl Field2 {
    pub fn zeros(n1: usize, n2: usize) -> Self {
        Field2 { n1, n2, data: vec![0.0; n1 * n2] }
    }

    pub fn from_vec(n1: usize, n2: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n1 * n2 {
            return Err(Error::LengthMismatch { expected: n1 * n2, got: data.len() });
        }
        Ok(Field2 { n1, n2, data })
    }

    pub fn from_fn(n1: usize, n2: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n1 * n2);
        for i in 0..n1 {
            for j in 0..n2 {
                data.push(f(i, j));
            }
        }
        Field2 { n1, n2, data }
    }

    /// Outer product `u(x1) v(x2)`.
    pub fn tensor(u: &[f64], v: &[f64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n2 + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n2 + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n2..(i + 1) * self.n2]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Field2 { n1: self.n1, n2: self.n2, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n2, self.n1, |i, j| self.get(j, i))
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Field2) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Field2) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Flat binary dump: magic, `n1`, `n2` as u64 LE, then f64 LE row-major.
    pub fn write_dump(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&(self.n1 as u64).to_le_bytes())?;
        w.write_all(&(self.n2 as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump(mut r: impl Read) -> std::io::Result<Self> {
        let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(bad("bad field dump header"));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n1 = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let n2 = u64::from_le_bytes(word) as usize;
        let mut data = Vec::with_capacity(n1 * n2);
        for _ in 0..n1 * n2 {
            r.read_exact(&mut word)?;
            data.push(f64::from_le_bytes(word));
        }
        Ok(Field2 { n1, n2, data })
    }
}
