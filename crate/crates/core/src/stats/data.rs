//! Source/target data model, covariance blocks and noise samplers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use super::linalg::{cholesky_psd, is_symmetric, lower_mul, mat_vec};
use crate::error::{Error, Result};

const PSD_TOL: f64 = 1e-8;

/// Covariance of one domain's vectorized data (rows concatenated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovBlock {
    /// `var * I_n`.
    Scaled { n: usize, var: f64 },
    Diagonal { diag: Vec<f64> },
    /// `I_rows ⊗ Ξ`: independent rows, each with covariance `Ξ` (`d x d`).
    RowKron { rows: usize, d: usize, xi: Vec<f64> },
    /// Row-major dense `n x n` matrix.
    Dense { n: usize, data: Vec<f64> },
}

impl CovBlock {
    pub fn identity(n: usize) -> Self {
        CovBlock::Scaled { n, var: 1.0 }
    }

    /// `Ξ = [rho^|i-j|]` for each of `rows` independent rows.
    pub fn banded_rows(rows: usize, d: usize, rho: f64, var: f64) -> Self {
        let xi = (0..d * d)
            .map(|k| var * rho.powi((k / d).abs_diff(k % d) as i32))
            .collect();
        CovBlock::RowKron { rows, d, xi }
    }

    pub fn dim(&self) -> usize {
        match self {
            CovBlock::Scaled { n, .. } => *n,
            CovBlock::Diagonal { diag } => diag.len(),
            CovBlock::RowKron { rows, d, .. } => rows * d,
            CovBlock::Dense { n, .. } => *n,
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        match self {
            CovBlock::Scaled { var, .. } => *var,
            CovBlock::Diagonal { diag } => diag[i],
            CovBlock::RowKron { d, xi, .. } => {
                let k = i % d;
                xi[k * d + k]
            }
            CovBlock::Dense { n, data } => data[i * n + i],
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        match self {
            CovBlock::Scaled { var, .. } => x.iter().map(|v| var * v).collect(),
            CovBlock::Diagonal { diag } => x.iter().zip(diag).map(|(v, s)| v * s).collect(),
            CovBlock::RowKron { d, xi, .. } => x.chunks(*d).flat_map(|row| mat_vec(*d, xi, row)).collect(),
            CovBlock::Dense { n, data } => mat_vec(*n, data, x),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            for (j, v) in self.mul_vec(&e).into_iter().enumerate() {
                out[j * n + i] = v;
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            CovBlock::Scaled { var, .. } => {
                if !(*var >= 0.0) || !var.is_finite() {
                    return bad(format!("variance must be non-negative, got {var}"));
                }
            }
            CovBlock::Diagonal { diag } => {
                if let Some(v) = diag.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                    return bad(format!("diagonal variance must be non-negative, got {v}"));
                }
            }
            CovBlock::RowKron { d, xi, .. } => check_psd(*d, xi)?,
            CovBlock::Dense { n, data } => check_psd(*n, data)?,
        }
        Ok(())
    }

    /// Draws `L ξ` with `ξ` standard normal and `L L' = self`.
    fn sample_gaussian<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.dim();
        let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        match self {
            CovBlock::Scaled { var, .. } => xi.iter().map(|v| v * var.sqrt()).collect(),
            CovBlock::Diagonal { diag } => xi.iter().zip(diag).map(|(v, s)| v * s.sqrt()).collect(),
            CovBlock::RowKron { d, xi: m, .. } => {
                let l = cholesky_psd(*d, m, PSD_TOL).expect("validated PSD");
                xi.chunks(*d).flat_map(|row| lower_mul(*d, &l, row)).collect()
            }
            CovBlock::Dense { data, .. } => {
                let l = cholesky_psd(n, data, PSD_TOL).expect("validated PSD");
                lower_mul(n, &l, &xi)
            }
        }
    }
}

fn check_psd(n: usize, a: &[f64]) -> Result<()> {
    if a.len() != n * n {
        return Err(Error::Dimension(format!(
            "covariance has {} entries, expected {n}x{n}",
            a.len()
        )));
    }
    if !is_symmetric(n, a, PSD_TOL) {
        return Err(Error::Config("covariance is not symmetric".into()));
    }
    if cholesky_psd(n, a, PSD_TOL).is_none() {
        return Err(Error::Config("covariance is not positive semidefinite".into()));
    }
    Ok(())
}

/// Block-diagonal covariance of the stacked `(source; target)` vector.
/// The off-diagonal blocks are zero by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCovariance {
    pub source: CovBlock,
    pub target: CovBlock,
}

impl BlockCovariance {
    pub fn new(source: CovBlock, target: CovBlock) -> Result<Self> {
        source.validate()?;
        target.validate()?;
        Ok(Self { source, target })
    }

    pub fn identity(n_source: usize, n_target: usize) -> Self {
        Self {
            source: CovBlock::identity(n_source),
            target: CovBlock::identity(n_target),
        }
    }

    pub fn scaled(n_source: usize, n_target: usize, var: f64) -> Self {
        Self {
            source: CovBlock::Scaled { n: n_source, var },
            target: CovBlock::Scaled { n: n_target, var },
        }
    }

    pub fn dim(&self) -> usize {
        self.source.dim() + self.target.dim()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let ns = self.source.dim();
        let mut out = self.source.mul_vec(&x[..ns]);
        out.extend(self.target.mul_vec(&x[ns..]));
        out
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        super::linalg::dot(x, &self.mul_vec(x))
    }

    /// Full dense matrix; only for small problems and tests.
    pub fn full(&self) -> Vec<f64> {
        let ns = self.source.dim();
        let n = self.dim();
        let s = self.source.to_dense();
        let t = self.target.to_dense();
        let mut out = vec![0.0; n * n];
        for i in 0..ns {
            out[i * n..i * n + ns].copy_from_slice(&s[i * ns..(i + 1) * ns]);
        }
        let nt = n - ns;
        for i in 0..nt {
            out[(ns + i) * n + ns..(ns + i + 1) * n].copy_from_slice(&t[i * nt..(i + 1) * nt]);
        }
        out
    }
}

/// Noise family for the simulated experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    Laplace,
    /// Azzalini skew normal with shape parameter `shape`.
    SkewNormal { shape: f64 },
    StudentT { dof: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::gaussian()
    }
}

impl NoiseSpec {
    pub fn gaussian() -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            scale: 1.0,
        }
    }

    pub fn new(kind: NoiseKind, scale: f64) -> Result<Self> {
        let spec = Self { kind, scale };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Config(format!("noise scale must be positive, got {}", self.scale)));
        }
        match self.kind {
            NoiseKind::StudentT { dof } if !(dof >= 3.0) => Err(Error::Config(format!(
                "student_t needs dof >= 3 for finite variance, got {dof}"
            ))),
            NoiseKind::SkewNormal { shape } if !shape.is_finite() => {
                Err(Error::Config("skew_normal shape must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, NoiseKind::Gaussian)
    }

    /// One zero-mean, unit-variance draw from the family.
    pub fn standardized<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::Gaussian => rng.sample(StandardNormal),
            NoiseKind::Laplace => {
                // inverse CDF with b = 1/sqrt(2) so that 2b^2 = 1
                let u: f64 = rng.random::<f64>() - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).ln() * std::f64::consts::FRAC_1_SQRT_2
            }
            NoiseKind::SkewNormal { shape } => {
                let delta = shape / (1.0 + shape * shape).sqrt();
                let u0: f64 = rng.sample(StandardNormal);
                let v: f64 = rng.sample(StandardNormal);
                let x = delta * u0.abs() + (1.0 - delta * delta).sqrt() * v;
                let two_over_pi = 2.0 / std::f64::consts::PI;
                let mean = delta * two_over_pi.sqrt();
                let var = 1.0 - two_over_pi * delta * delta;
                (x - mean) / var.sqrt()
            }
            NoiseKind::StudentT { dof } => {
                let t: f64 = StudentT::new(dof).expect("dof validated").sample(rng);
                t * ((dof - 2.0) / dof).sqrt()
            }
        }
    }
}

/// Observed source and target data with their known covariance.
///
/// Both domains hold `dim` coordinates per instance, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDataset {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    pub dim: usize,
    pub cov: BlockCovariance,
}

impl GaussianDataset {
    pub fn new(source: Vec<f64>, target: Vec<f64>, dim: usize, cov: BlockCovariance) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if source.len() % dim != 0 || target.len() % dim != 0 {
            return Err(Error::Dimension(format!(
                "data lengths {} and {} are not multiples of dim {dim}",
                source.len(),
                target.len()
            )));
        }
        let ds = Self { source, target, dim, cov };
        if ds.n_s() < 1 {
            return Err(Error::Config("need at least one source instance".into()));
        }
        if ds.n_t() < 2 {
            return Err(Error::Config("need at least two target instances".into()));
        }
        if ds.cov.source.dim() != ds.source.len() || ds.cov.target.dim() != ds.target.len() {
            return Err(Error::Dimension(format!(
                "covariance blocks {}+{} do not match data {}+{}",
                ds.cov.source.dim(),
                ds.cov.target.dim(),
                ds.source.len(),
                ds.target.len()
            )));
        }
        if ds.source.iter().chain(&ds.target).any(|v| !v.is_finite()) {
            return Err(Error::Config("data contains non-finite values".into()));
        }
        ds.cov.source.validate()?;
        ds.cov.target.validate()?;
        Ok(ds)
    }

    pub fn n_s(&self) -> usize {
        self.source.len() / self.dim
    }

    pub fn n_t(&self) -> usize {
        self.target.len() / self.dim
    }

    /// Stacked `(source; target)` vector.
    pub fn stacked(&self) -> Vec<f64> {
        let mut y = self.source.clone();
        y.extend_from_slice(&self.target);
        y
    }
}

/// Draws one dataset around the given means.
///
/// Gaussian noise uses the full covariance. Other families draw independent
/// standardized coordinates scaled to the covariance diagonal.
pub fn sample_dataset(
    mean_source: &[f64],
    mean_target: &[f64],
    dim: usize,
    cov: &BlockCovariance,
    noise: &NoiseSpec,
    rng_seed: u64,
) -> Result<GaussianDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_dataset_with(mean_source, mean_target, dim, cov, noise, &mut rng)
}

pub fn sample_dataset_with<R: Rng>(
    mean_source: &[f64],
    mean_target: &[f64],
    dim: usize,
    cov: &BlockCovariance,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<GaussianDataset> {
    if mean_source.len() != cov.source.dim() || mean_target.len() != cov.target.dim() {
        return Err(Error::Config(format!(
            "means of length {}+{} do not match covariance blocks {}+{}",
            mean_source.len(),
            mean_target.len(),
            cov.source.dim(),
            cov.target.dim()
        )));
    }
    noise.validate()?;
    let draw = |block: &CovBlock, mean: &[f64], rng: &mut R| -> Vec<f64> {
        let eps = if noise.is_gaussian() {
            block.sample_gaussian(rng)
        } else {
            (0..block.dim())
                .map(|i| noise.standardized(rng) * block.diag(i).sqrt())
                .collect()
        };
        mean.iter().zip(eps).map(|(m, e)| m + noise.scale * e).collect()
    };
    let source = draw(&cov.source, mean_source, rng);
    let target = draw(&cov.target, mean_target, rng);
    GaussianDataset::new(source, target, dim, cov.clone())
}
