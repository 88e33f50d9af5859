use serde::{Deserialize, Serialize};

use super::simplex::TransportSolution;
use crate::error::{Error, Result};

/// The map `Θ = [[0, n_s T̂], [0, I]]` stored by its nonzero rows of
/// `n_s T̂`. Applying it to stacked data returns `(adapted source; target)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationOperator {
    pub n_s: usize,
    pub n_t: usize,
    /// Per source row, `(target index, weight)` sorted by target index.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl AdaptationOperator {
    pub fn from_solution(solution: &TransportSolution) -> Self {
        let mut rows = vec![Vec::new(); solution.n_s];
        for (i, j, wgt) in solution.scaled_weights() {
            rows[i].push((j, wgt));
        }
        Self {
            n_s: solution.n_s,
            n_t: solution.n_t,
            rows,
        }
    }

    /// Applies `Θ` to a stacked row-major vector of `n_s + n_t` rows of
    /// width `dim`.
    pub fn apply(&self, stacked: &[f64], dim: usize) -> Result<Vec<f64>> {
        let n = self.n_s + self.n_t;
        if stacked.len() != n * dim {
            return Err(Error::Dimension(format!(
                "stacked vector has {} entries, expected {n}x{dim}",
                stacked.len()
            )));
        }
        let target = &stacked[self.n_s * dim..];
        let mut out = self.adapt_rows(target, dim);
        out.extend_from_slice(target);
        Ok(out)
    }

    fn adapt_rows(&self, target: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_s * dim];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, wgt) in row {
                for k in 0..dim {
                    out[i * dim + k] += wgt * target[j * dim + k];
                }
            }
        }
        out
    }

    /// Dense `(n_s + n_t)^2` row-major matrix.
    pub fn theta_dense(&self) -> Vec<f64> {
        let n = self.n_s + self.n_t;
        let mut m = vec![0.0; n * n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, wgt) in row {
                m[i * n + self.n_s + j] = wgt;
            }
        }
        for j in 0..self.n_t {
            m[(self.n_s + j) * n + self.n_s + j] = 1.0;
        }
        m
    }
}

/// Adapted source `n_s T̂ X^t` for a row-major target of width `dim`.
pub fn adapt(solution: &TransportSolution, target: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || target.len() != solution.n_t * dim {
        return Err(Error::Dimension(format!(
            "target has {} entries, expected {}x{dim}",
            target.len(),
            solution.n_t
        )));
    }
    Ok(AdaptationOperator::from_solution(solution).adapt_rows(target, dim))
}
