use core::fmt;
use core::str::FromStr;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GradientMode {
    Dense,
    Sparse,
}

impl GradientMode {
    pub fn name(self) -> &'static str {
        match self {
            GradientMode::Dense => "dense",
            GradientMode::Sparse => "sparse",
        }
    }
}

impl fmt::Display for GradientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dense" => Ok(GradientMode::Dense),
            "sparse" => Ok(GradientMode::Sparse),
            _ => Err(Error::invalid(alloc::format!("unknown gradient mode `{s}`"))),
        }
    }
}

/// Gradient with respect to the learnable memory `M`.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientBuffer {
    /// One value per memory slot.
    Dense(Vec<f64>),
    /// Strictly increasing locations with their accumulated values.
    Sparse { memory_size: usize, locations: Vec<usize>, values: Vec<f64> },
}

impl GradientBuffer {
    pub fn sparse(memory_size: usize, locations: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if locations.len() != values.len() {
            return Err(Error::invalid("sparse locations and values differ in length"));
        }
        if locations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("sparse locations must be strictly increasing"));
        }
        if locations.last().is_some_and(|&l| l >= memory_size) {
            return Err(Error::invalid("sparse location beyond memory size"));
        }
        Ok(GradientBuffer::Sparse { memory_size, locations, values })
    }

    pub fn mode(&self) -> GradientMode {
        match self {
            GradientBuffer::Dense(_) => GradientMode::Dense,
            GradientBuffer::Sparse { .. } => GradientMode::Sparse,
        }
    }

    /// `|M|` this gradient refers to.
    pub fn memory_size(&self) -> usize {
        match self {
            GradientBuffer::Dense(v) => v.len(),
            GradientBuffer::Sparse { memory_size, .. } => *memory_size,
        }
    }

    /// Stored values (all slots for dense, listed ones for sparse).
    pub fn values(&self) -> &[f64] {
        match self {
            GradientBuffer::Dense(v) => v,
            GradientBuffer::Sparse { values, .. } => values,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// Full-length buffer; unlisted sparse slots are zero.
    pub fn densify(&self) -> Vec<f64> {
        match self {
            GradientBuffer::Dense(v) => v.clone(),
            GradientBuffer::Sparse { memory_size, locations, values } => {
                let mut out = vec![0.0; *memory_size];
                for (&l, &v) in locations.iter().zip(values) {
                    out[l] = v;
                }
                out
            }
        }
    }
}

/// Where every element of a looked-up batch came from.
///
/// Element `q = b * dim + j` of the output was read from
/// `memory[locations[q]]` and multiplied by `signs[q]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    batch: usize,
    dim: usize,
    pub(crate) locations: Vec<usize>,
    pub(crate) signs: Vec<i8>,
}

impl IndexMap {
    pub fn new(batch: usize, dim: usize, locations: Vec<usize>, signs: Vec<i8>) -> Result<Self> {
        let len = batch.checked_mul(dim).ok_or_else(|| Error::invalid("index map shape overflows"))?;
        if locations.len() != len || signs.len() != len {
            return Err(Error::invalid("index map arrays must have length batch * dim"));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("index map signs must be +1 or -1"));
        }
        Ok(Self { batch, dim, locations, signs })
    }

    pub(crate) fn with_capacity(batch: usize, dim: usize) -> Self {
        Self { batch, dim, locations: vec![0; batch * dim], signs: vec![1; batch * dim] }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn locations(&self) -> &[usize] {
        &self.locations
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// First flat position whose location is not below `memory_size`.
    pub fn check_bounds(&self, memory_size: usize) -> Result<()> {
        match self.locations.iter().position(|&l| l >= memory_size) {
            None => Ok(()),
            Some(position) => {
                Err(Error::CorruptIndexMap { position, location: self.locations[position], memory_size })
            }
        }
    }
}
