use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Row-major `n x d` table of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTable {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl DenseTable {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid("table needs at least one row and one column"));
        }
        if n.checked_mul(d) != Some(values.len()) {
            return Err(Error::invalid("table values must have length n * d"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("table entries must be finite"));
        }
        Ok(Self { n, d, values })
    }

    pub fn zeros(n: usize, d: usize) -> Result<Self> {
        Self::new(n, d, alloc::vec![0.0; n * d])
    }

    /// Entries i.i.d. standard normal.
    pub fn gaussian(n: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let values = (0..n * d).map(|_| rng.normal()).collect();
        Self::new(n, d, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    /// Table whose row `r` is row `perm[r]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::invalid("permutation length must equal n"));
        }
        let mut values = Vec::with_capacity(self.values.len());
        for &p in perm {
            if p >= self.n {
                return Err(Error::invalid("permutation index out of range"));
            }
            values.extend_from_slice(self.row(p));
        }
        Self::new(self.n, self.d, values)
    }
}
