use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean vector and covariance matrix of a state vector, either as a
/// posterior (m, C) or as an evolved prior (a, R).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMoments {
    pub m: DVector<f64>,
    pub c: DMatrix<f64>,
}

impl StateMoments {
    pub fn new(m: DVector<f64>, c: DMatrix<f64>) -> Result<Self> {
        if c.nrows() != m.len() || c.ncols() != m.len() {
            return Err(Error::DimensionMismatch {
                expected: m.len(),
                actual: c.nrows(),
            });
        }
        if m.is_empty() {
            return Err(Error::Domain("state dimension must be positive".into()));
        }
        if m.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("state moments must be finite".into()));
        }
        let scale = c.amax().max(1.0);
        if (&c - c.transpose()).amax() > 1e-9 * scale {
            return Err(Error::Domain("state covariance must be symmetric".into()));
        }
        let mut s = Self { m, c };
        s.symmetrize();
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn symmetrize(&mut self) {
        let n = self.c.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.c[(i, j)] + self.c[(j, i)]);
                self.c[(i, j)] = v;
                self.c[(j, i)] = v;
            }
        }
    }

    /// Smallest eigenvalue of C.
    pub fn min_eigenvalue(&self) -> f64 {
        self.c
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}
