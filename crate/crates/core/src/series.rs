//! Row-major storage for one trajectory: `len` time steps of `dim` values.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    dim: usize,
    data: Vec<f64>,
}

impl Series {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("series dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "{} values do not divide into rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        Self { dim, data: vec![0.0; len * dim] }
    }

    pub fn from_rows<I, R>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        let mut data = Vec::new();
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Dimension(format!("row of width {} in series of width {dim}", row.len())));
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn from_vectors(dim: usize, rows: &[DVector<f64>]) -> Result<Self> {
        Self::from_rows(dim, rows.iter().map(|v| v.as_slice()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn vector(&self, t: usize) -> DVector<f64> {
        DVector::from_row_slice(self.row(t))
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// First `len` rows.
    pub fn prefix(&self, len: usize) -> Series {
        Series { dim: self.dim, data: self.data[..len * self.dim].to_vec() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl FnMut(&f64) -> f64) -> Series {
        Series { dim: self.dim, data: self.data.iter().map(f).collect() }
    }
}
