//! Dense row-major feature matrices.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::prob::ProbError;

/// `m` samples of dimension `d`, stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    m: usize,
    d: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(m: usize, d: usize, data: Vec<f64>) -> Result<Self, ProbError> {
        if data.len() != m * d {
            return Err(ProbError::ShapeMismatch { expected: m * d, got: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(ProbError::NonFiniteInput);
        }
        Ok(Self { m, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ProbError> {
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(ProbError::ShapeMismatch { expected: d, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), d, data)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d.max(1)).take(self.m)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { m: idx.len(), d: self.d, data }
    }
}
