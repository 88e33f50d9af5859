use crate::error::{Error, Result};

/// Balanced transport problem between `n_s` uniform source atoms and `n_t`
/// uniform target atoms. `cost[i * n_t + j]` is the cost of moving mass from
/// source `i` to target `j` (rows of the cost matrix concatenated).
#[derive(Debug, Clone, PartialEq)]
pub struct OtProblem {
    pub n_s: usize,
    pub n_t: usize,
    pub cost: Vec<f64>,
    /// Sort keys used to order the initial north-west-corner basis.
    pub source_keys: Vec<f64>,
    pub target_keys: Vec<f64>,
}

impl OtProblem {
    pub fn new(n_s: usize, n_t: usize, cost: Vec<f64>) -> Result<Self> {
        if n_s == 0 || n_t == 0 {
            return Err(Error::Config("transport problem needs non-empty marginals".into()));
        }
        if cost.len() != n_s * n_t {
            return Err(Error::Dimension(format!(
                "cost has {} entries, expected {n_s}x{n_t}",
                cost.len()
            )));
        }
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("cost contains non-finite entries".into()));
        }
        Ok(Self {
            n_s,
            n_t,
            cost,
            source_keys: vec![0.0; n_s],
            target_keys: vec![0.0; n_t],
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_s * self.n_t
    }

    /// Number of equality rows kept after dropping the redundant one.
    pub fn n_basic(&self) -> usize {
        self.n_s + self.n_t - 1
    }
}

/// Squared-difference cost between scalar source and target samples.
pub fn build_cost(source: &[f64], target: &[f64]) -> Result<OtProblem> {
    build_cost_rows(source, target, 1)
}

/// Squared Euclidean cost between row-major `dim`-dimensional samples.
pub fn build_cost_rows(source: &[f64], target: &[f64], dim: usize) -> Result<OtProblem> {
    if dim == 0 || source.is_empty() || target.is_empty() {
        return Err(Error::Config("cost needs non-empty source and target".into()));
    }
    if source.len() % dim != 0 || target.len() % dim != 0 {
        return Err(Error::Dimension(format!("rows are not multiples of dim {dim}")));
    }
    let n_s = source.len() / dim;
    let n_t = target.len() / dim;
    let mut cost = Vec::with_capacity(n_s * n_t);
    for xs in source.chunks(dim) {
        for xt in target.chunks(dim) {
            cost.push(xs.iter().zip(xt).map(|(a, b)| (a - b) * (a - b)).sum());
        }
    }
    let mut p = OtProblem::new(n_s, n_t, cost)?;
    p.source_keys = source.chunks(dim).map(|r| r.iter().sum()).collect();
    p.target_keys = target.chunks(dim).map(|r| r.iter().sum()).collect();
    Ok(p)
}

/// Cost of the problem on the data line `a + b z`, split into its constant,
/// linear and quadratic parts: `c(z) = w + r z + o z^2` per cell, with
/// `w = (Ωa)∘(Ωa)`, `r = 2 (Ωa)∘(Ωb)`, `o = (Ωb)∘(Ωb)` summed over
/// coordinates. `Ω` is never formed: its row for cell `(i, j)` applied to
/// a stacked vector `v` is `v_i - v_{n_s + j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricCost {
    pub n_s: usize,
    pub n_t: usize,
    pub w: Vec<f64>,
    pub r: Vec<f64>,
    pub o: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    dim: usize,
}

impl ParametricCost {
    /// `a` and `b` are stacked `(source; target)` row-major vectors.
    pub fn new(n_s: usize, n_t: usize, dim: usize, a: &[f64], b: &[f64]) -> Result<Self> {
        let n = (n_s + n_t) * dim;
        if a.len() != n || b.len() != n {
            return Err(Error::Dimension(format!(
                "line vectors of length {}/{} do not match {} instances x {dim}",
                a.len(),
                b.len(),
                n_s + n_t
            )));
        }
        let cells = n_s * n_t;
        let (mut w, mut r, mut o) = (vec![0.0; cells], vec![0.0; cells], vec![0.0; cells]);
        for i in 0..n_s {
            for j in 0..n_t {
                let c = i * n_t + j;
                for k in 0..dim {
                    let da = a[i * dim + k] - a[(n_s + j) * dim + k];
                    let db = b[i * dim + k] - b[(n_s + j) * dim + k];
                    w[c] += da * da;
                    r[c] += 2.0 * da * db;
                    o[c] += db * db;
                }
            }
        }
        Ok(Self {
            n_s,
            n_t,
            w,
            r,
            o,
            a: a.to_vec(),
            b: b.to_vec(),
            dim,
        })
    }

    /// The concrete transport problem at parameter `z`.
    pub fn at(&self, z: f64) -> OtProblem {
        let cost = self
            .w
            .iter()
            .zip(&self.r)
            .zip(&self.o)
            .map(|((w, r), o)| w + z * (r + z * o))
            .collect();
        let dim = self.dim;
        let key = |row: usize| -> f64 {
            (0..dim)
                .map(|k| self.a[row * dim + k] + z * self.b[row * dim + k])
                .sum()
        };
        OtProblem {
            n_s: self.n_s,
            n_t: self.n_t,
            cost,
            source_keys: (0..self.n_s).map(key).collect(),
            target_keys: (0..self.n_t).map(|j| key(self.n_s + j)).collect(),
        }
    }
}
