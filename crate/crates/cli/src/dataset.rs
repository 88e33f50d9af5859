//! Dataset interchange file: one JSON document holding both domains, the
//! known covariance, and optional detector/test settings.

use cadda::stats::{BlockCovariance, CovBlock, GaussianDataset};
use serde::Deserialize;

/// A sample is a bare number (width 1) or an array of coordinates.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Row {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Row {
    fn into_vec(self) -> Vec<f64> {
        match self {
            Row::Scalar(v) => vec![v],
            Row::Vector(v) => v,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum CovSpec {
    Identity {
        #[serde(default = "one")]
        var: f64,
    },
    /// Per-entry variances, laid out like the flattened rows.
    Diagonal { source: Vec<f64>, target: Vec<f64> },
    /// Independent rows, each with `var * [rho^|k-l|]`.
    BandedRho {
        rho: f64,
        #[serde(default = "one")]
        var: f64,
    },
    Full { source: Vec<Vec<f64>>, target: Vec<Vec<f64>> },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    #[serde(default)]
    schema_version: Option<u32>,
    source: Vec<Row>,
    target: Vec<Row>,
    #[serde(default)]
    cov: Option<CovSpec>,
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default)]
    alpha: Option<f64>,
}

#[derive(Debug)]
pub struct Input {
    pub data: GaussianDataset,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
}

fn flatten(rows: Vec<Row>, what: &str) -> Result<(Vec<f64>, usize), String> {
    let mut dim = None;
    let mut out = Vec::new();
    for (k, r) in rows.into_iter().enumerate() {
        let r = r.into_vec();
        match dim {
            None => dim = Some(r.len()),
            Some(d) if d != r.len() => {
                return Err(format!("{what}[{k}] has {} coordinates, expected {d}", r.len()));
            }
            _ => {}
        }
        out.extend(r);
    }
    match dim {
        Some(0) => Err(format!("{what} rows are empty")),
        Some(d) => Ok((out, d)),
        None => Err(format!("{what} has no rows")),
    }
}

fn dense(m: Vec<Vec<f64>>, n: usize, what: &str) -> Result<CovBlock, String> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(format!("cov.{what} must be {n}x{n}"));
    }
    for (i, row) in m.iter().enumerate() {
        if !(row[i] > 0.0) {
            return Err(format!("cov.{what}[{i}][{i}] = {} is not a positive variance", row[i]));
        }
    }
    Ok(CovBlock::Dense {
        n,
        data: m.into_iter().flatten().collect(),
    })
}

fn positive(v: &[f64], what: &str) -> Result<(), String> {
    match v.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
        Some(k) => Err(format!("{what}[{k}] = {} is not a positive variance", v[k])),
        None => Ok(()),
    }
}

fn covariance(spec: CovSpec, n_s: usize, n_t: usize, dim: usize) -> Result<BlockCovariance, String> {
    let (ls, lt) = (n_s * dim, n_t * dim);
    let (source, target) = match spec {
        CovSpec::Identity { var } => {
            positive(&[var], "cov.var")?;
            (CovBlock::Scaled { n: ls, var }, CovBlock::Scaled { n: lt, var })
        }
        CovSpec::Diagonal { source, target } => {
            if source.len() != ls || target.len() != lt {
                return Err(format!(
                    "cov diagonal lengths {}+{} do not match data {ls}+{lt}",
                    source.len(),
                    target.len()
                ));
            }
            positive(&source, "cov.source")?;
            positive(&target, "cov.target")?;
            (CovBlock::Diagonal { diag: source }, CovBlock::Diagonal { diag: target })
        }
        CovSpec::BandedRho { rho, var } => {
            if !(0.0..1.0).contains(&rho) {
                return Err(format!("cov.rho must be in [0, 1), got {rho}"));
            }
            positive(&[var], "cov.var")?;
            (
                CovBlock::banded_rows(n_s, dim, rho, var),
                CovBlock::banded_rows(n_t, dim, rho, var),
            )
        }
        CovSpec::Full { source, target } => (dense(source, ls, "source")?, dense(target, lt, "target")?),
    };
    BlockCovariance::new(source, target).map_err(|e| e.to_string())
}

/// Parses and validates a dataset document.
pub fn parse(text: &str) -> Result<Input, String> {
    let raw: RawInput = serde_json::from_str(text).map_err(|e| format!("dataset: {e}"))?;
    if let Some(v) = raw.schema_version {
        if v != cadda::engine::SCHEMA_VERSION {
            return Err(format!("dataset schema_version {v} is not supported"));
        }
    }
    let (source, ds) = flatten(raw.source, "source")?;
    let (target, dt) = flatten(raw.target, "target")?;
    if ds != dt {
        return Err(format!("source rows have {ds} coordinates but target rows have {dt}"));
    }
    let (n_s, n_t) = (source.len() / ds, target.len() / ds);
    let cov = covariance(raw.cov.unwrap_or(CovSpec::Identity { var: 1.0 }), n_s, n_t, ds)?;
    let data = GaussianDataset::new(source, target, ds, cov).map_err(|e| e.to_string())?;
    Ok(Input {
        data,
        gamma: raw.gamma,
        alpha: raw.alpha,
    })
}
