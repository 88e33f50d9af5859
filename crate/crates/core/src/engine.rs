//! Test statistics, the data line, the hierarchical line search over
//! (transport basis x detector state) cells, and the p-values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{linear_feasible_interval, linear_system_interval, quadratic_system_interval, EventSystem};
use crate::mad::{detect, detection_event_system, AnomalySet, Detection, DEFAULT_GAMMA};
use crate::ot::{build_cost_rows, ot_event_system, solve_ot, solve_ot_from, AdaptationOperator, ParametricCost};
use crate::stats::normal::{log_upper_tail, log_region_mass, two_sided_p};
use crate::stats::{truncated_two_sided_p, BlockCovariance, GaussianDataset, Interval, TruncationRegion};

pub const SCHEMA_VERSION: u32 = 1;
/// Half-width of the search window in units of `sigma_eta`.
pub const WINDOW_SIGMAS: f64 = 20.0;
const STEP_REL: f64 = 1e-9;
const MERGE_REL: f64 = 1e-9;
const MAX_DOUBLINGS: u32 = 60;

/// Contrast `η` with `T = ηᵀ y` and its standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDirection {
    pub eta: Vec<f64>,
    pub j: usize,
    pub sigma_eta: f64,
    /// Coordinate signs `ι` folded into `η` (all `+1` for the plain contrast).
    pub signs: Vec<i8>,
}

/// Univariate contrast `x^t_j - mean of the non-anomalous targets`.
pub fn build_direction(
    anomalies: &AnomalySet,
    j: usize,
    n_s: usize,
    n_t: usize,
    cov: &BlockCovariance,
) -> Result<TestDirection> {
    build_direction_rows(anomalies, j, n_s, n_t, &[1], cov)
}

/// Row contrast with per-coordinate signs; `signs.len()` is the width.
pub fn build_direction_rows(
    anomalies: &AnomalySet,
    j: usize,
    n_s: usize,
    n_t: usize,
    signs: &[i8],
    cov: &BlockCovariance,
) -> Result<TestDirection> {
    let dim = signs.len();
    if !anomalies.contains(j) {
        return Err(Error::Config(format!("index {j} is not a detected anomaly")));
    }
    if anomalies.len() >= n_t {
        return Err(Error::DegenerateTest(format!(
            "all {n_t} target points are anomalies; no reference mean"
        )));
    }
    if cov.dim() != (n_s + n_t) * dim {
        return Err(Error::Dimension(format!(
            "covariance of size {} does not match {} instances x {dim}",
            cov.dim(),
            n_s + n_t
        )));
    }
    let rest = 1.0 / (n_t - anomalies.len()) as f64;
    let mut eta = vec![0.0; (n_s + n_t) * dim];
    for l in 0..n_t {
        let w = if l == j {
            1.0
        } else if anomalies.contains(l) {
            continue;
        } else {
            -rest
        };
        for (k, s) in signs.iter().enumerate() {
            eta[(n_s + l) * dim + k] = w * f64::from(*s);
        }
    }
    let var = cov.quad_form(&eta);
    if !(var > 0.0) {
        return Err(Error::DegenerateTest(format!("contrast variance {var} is not positive")));
    }
    Ok(TestDirection {
        eta,
        j,
        sigma_eta: var.sqrt(),
        signs: signs.to_vec(),
    })
}

/// Data line `a + b z` through the observation at `z = z_obs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineParametrization {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub z_obs: f64,
}

impl LineParametrization {
    pub fn at(&self, z: f64) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| a + b * z).collect()
    }
}

/// `b = Ση / ηᵀΣη`, `a = y - b z_obs`.
pub fn parametrize_line(stacked: &[f64], direction: &TestDirection, cov: &BlockCovariance) -> Result<LineParametrization> {
    if stacked.len() != direction.eta.len() {
        return Err(Error::Dimension("data and contrast lengths differ".into()));
    }
    let s_eta = cov.mul_vec(&direction.eta);
    let var = direction.sigma_eta * direction.sigma_eta;
    let b: Vec<f64> = s_eta.iter().map(|v| v / var).collect();
    let z_obs: f64 = direction.eta.iter().zip(stacked).map(|(e, y)| e * y).sum();
    let a = stacked.iter().zip(&b).map(|(y, b)| y - b * z_obs).collect();
    Ok(LineParametrization { a, b, z_obs })
}

/// Shape of the pipeline: sizes and detector parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineShape {
    pub n_s: usize,
    pub n_t: usize,
    pub dim: usize,
    pub gamma: f64,
}

/// Everything the pipeline decided on one input.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    pub basis: Vec<usize>,
    pub detection: Detection,
}

/// Transport, adaptation and detection on stacked data, from scratch.
pub fn run_pipeline(stacked: &[f64], shape: &PipelineShape) -> Result<PipelineState> {
    let split = shape.n_s * shape.dim;
    let problem = build_cost_rows(&stacked[..split], &stacked[split..], shape.dim)?;
    let sol = solve_ot(&problem)?;
    let adapted = AdaptationOperator::from_solution(&sol).apply(stacked, shape.dim)?;
    Ok(PipelineState {
        basis: sol.basis,
        detection: detect(&adapted, shape.n_s, shape.dim, shape.gamma),
    })
}

/// One `(u, v)` cell of the walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub u: usize,
    pub v: usize,
    pub interval: Interval,
    pub anomaly_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub region: TruncationRegion,
    pub cells: Vec<CellRecord>,
}

struct CellAt {
    interval: Interval,
    detection: Detection,
}

/// Detector cell at `z` inside a fixed transport basis.
fn detector_cell(
    alpha: &[f64],
    beta: &[f64],
    shape: &PipelineShape,
    z: f64,
    window: &Interval,
) -> Result<(Detection, Interval)> {
    let values: Vec<f64> = alpha.iter().zip(beta).map(|(a, b)| a + b * z).collect();
    let det = detect(&values, shape.n_s, shape.dim, shape.gamma);
    let ev = detection_event_system(&det, alpha, beta, shape.dim, z)?;
    let iv = linear_system_interval(&ev, z, window)?.interval;
    Ok((det, iv))
}

/// The `𝒵_{u,v}` cell containing `z`, computed from scratch.
fn cell_at(line: &LineParametrization, pc: &ParametricCost, shape: &PipelineShape, z: f64, window: &Interval) -> Result<CellAt> {
    let sol = solve_ot(&pc.at(z))?;
    let bu = quadratic_system_interval(&ot_event_system(&sol, pc)?, z, window)?;
    let theta = AdaptationOperator::from_solution(&sol);
    let alpha = theta.apply(&line.a, shape.dim)?;
    let beta = theta.apply(&line.b, shape.dim)?;
    let (detection, iv) = detector_cell(&alpha, &beta, shape, z, window)?;
    let interval = bu
        .interval
        .intersect(&iv)
        .ok_or_else(|| Error::Numerical(format!("empty cell at z = {z}")))?;
    Ok(CellAt { interval, detection })
}

/// Walks `window` left to right. The outer loop moves across transport
/// bases, the inner loop across detector states within one basis; cells
/// whose target anomaly set equals `observed` are merged into the region.
pub fn hierarchical_line_search(
    line: &LineParametrization,
    shape: &PipelineShape,
    observed: &AnomalySet,
    window: &Interval,
    sigma: f64,
) -> Result<SearchOutcome> {
    let pc = ParametricCost::new(shape.n_s, shape.n_t, shape.dim, &line.a, &line.b)?;
    let step = |r: f64| STEP_REL * sigma.max(r.abs());
    let mut cells = Vec::new();
    let mut parts: Vec<Interval> = Vec::new();
    let mut last_edge = f64::NEG_INFINITY;
    let mut record = |cells: &mut Vec<CellRecord>, cell: CellRecord, gap: f64| {
        if cell.anomaly_match {
            match parts.last_mut() {
                Some(p) if cell.interval.lo <= p.hi + gap + MERGE_REL * sigma => p.hi = p.hi.max(cell.interval.hi),
                _ => parts.push(cell.interval),
            }
        }
        cells.push(cell);
    };

    let mut z = window.lo;
    let mut basis: Option<Vec<usize>> = None;
    let mut force = None;
    let mut u = 0;
    let mut mult = 1.0;
    let mut doublings = 0;
    loop {
        let sol = solve_ot_from(&pc.at(z), basis.as_deref(), force)?;
        let bu = quadratic_system_interval(&ot_event_system(&sol, &pc)?, z, window)?;
        let theta = AdaptationOperator::from_solution(&sol);
        let alpha = theta.apply(&line.a, shape.dim)?;
        let beta = theta.apply(&line.b, shape.dim)?;
        let mut v = 0;
        let mut zi = z;
        loop {
            let (det, iv) = detector_cell(&alpha, &beta, shape, zi, window)?;
            let interval = bu
                .interval
                .intersect(&iv)
                .ok_or_else(|| Error::Numerical(format!("empty cell at z = {zi}")))?;
            // a cell ending where it was probed holds only up to solver
            // tolerance; the next probe past it finds the real one
            if interval.hi > zi || zi >= window.hi {
                let gap = if last_edge.is_finite() { (zi - last_edge).max(0.0) } else { 0.0 };
                record(
                    &mut cells,
                    CellRecord {
                        u,
                        v,
                        interval,
                        anomaly_match: det.anomalies == *observed,
                    },
                    gap,
                );
                last_edge = interval.hi;
            }
            if interval.hi > zi {
                mult = 1.0;
                doublings = 0;
            } else {
                mult *= 2.0;
                doublings += 1;
                if doublings > MAX_DOUBLINGS {
                    return Err(Error::Stall(format!(
                        "no progress from z = {zi} after {MAX_DOUBLINGS} step doublings"
                    )));
                }
            }
            if interval.hi >= bu.interval.hi {
                break;
            }
            zi = interval.hi + mult * step(interval.hi);
            if zi > bu.interval.hi {
                break;
            }
            v += 1;
        }
        if bu.interval.hi >= window.hi {
            break;
        }
        let next = bu.interval.hi + mult * step(bu.interval.hi);
        if next > window.hi {
            break;
        }
        z = next;
        force = bu.hi_binding;
        basis = Some(sol.basis);
        u += 1;
    }
    Ok(SearchOutcome {
        region: TruncationRegion::from_intervals(parts, MERGE_REL * sigma),
        cells,
    })
}

/// Per-anomaly inference record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub j: usize,
    /// Test statistic: `T_j` (univariate) or `Γ_j` (rows).
    pub statistic: f64,
    pub z_obs: f64,
    pub sigma: f64,
    pub p_naive: f64,
    pub p_bonferroni: f64,
    pub p_oc: f64,
    pub p_selective: f64,
    pub region: TruncationRegion,
    pub oc_cell: Interval,
    pub log_region_mass: f64,
    pub cells_visited: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferOptions {
    pub gamma: f64,
    /// Replace the known covariance by a pooled empirical variance.
    pub estimate_variance: bool,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            estimate_variance: false,
        }
    }
}

/// Bonferroni over the `2^{n_t}` possible anomaly sets.
pub fn bonferroni(z: f64, sigma: f64, n_t: usize) -> f64 {
    if n_t <= 50 {
        return (two_sided_p(z / sigma) * 2f64.powi(n_t as i32)).min(1.0);
    }
    let log_p = std::f64::consts::LN_2 + log_upper_tail((z / sigma).abs()) + n_t as f64 * std::f64::consts::LN_2;
    log_p.min(0.0).exp()
}

/// Pooled variance: sources around their mean, non-anomalous targets
/// around theirs, per coordinate.
pub fn estimated_variance(data: &GaussianDataset, anomalies: &AnomalySet) -> Result<f64> {
    let d = data.dim;
    let (n_s, n_t) = (data.n_s(), data.n_t());
    let keep: Vec<usize> = (0..n_t).filter(|l| !anomalies.contains(*l)).collect();
    let dof = (n_s + keep.len()) as isize - 2;
    if dof <= 0 {
        return Err(Error::DegenerateTest("too few points to estimate the variance".into()));
    }
    let mut ss = 0.0;
    for k in 0..d {
        let ms = (0..n_s).map(|i| data.source[i * d + k]).sum::<f64>() / n_s as f64;
        ss += (0..n_s).map(|i| (data.source[i * d + k] - ms).powi(2)).sum::<f64>();
        let mt = keep.iter().map(|l| data.target[l * d + k]).sum::<f64>() / keep.len() as f64;
        ss += keep.iter().map(|l| (data.target[l * d + k] - mt).powi(2)).sum::<f64>();
    }
    let var = ss / (dof as f64 * d as f64);
    if !(var > 0.0) {
        return Err(Error::DegenerateTest("estimated variance is zero".into()));
    }
    Ok(var)
}

/// Anomaly set of the observed data.
pub fn observed_anomalies(data: &GaussianDataset, gamma: f64) -> Result<AnomalySet> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    let shape = PipelineShape {
        n_s: data.n_s(),
        n_t: data.n_t(),
        dim: data.dim,
        gamma,
    };
    let set = run_pipeline(&data.stacked(), &shape)?.detection.anomalies;
    if set.len() == shape.n_t {
        return Err(Error::DegenerateDetection { n_t: shape.n_t });
    }
    Ok(set)
}

/// Line, region and search trace for one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTrace {
    pub schema_version: u32,
    pub j: usize,
    pub z_obs: f64,
    pub sigma: f64,
    pub window: Interval,
    pub anomalies: AnomalySet,
    pub signs: Vec<i8>,
    pub cells: Vec<CellRecord>,
    /// Matching cells before sign conditioning.
    pub event_region: TruncationRegion,
    /// Final region the p-value uses.
    pub region: TruncationRegion,
    pub oc_cell: Interval,
    pub line: LineParametrization,
}

fn coordinate_signs(data: &GaussianDataset, anomalies: &AnomalySet, j: usize) -> Vec<i8> {
    let d = data.dim;
    let keep: Vec<usize> = (0..data.n_t()).filter(|l| !anomalies.contains(*l)).collect();
    (0..d)
        .map(|k| {
            let m = keep.iter().map(|l| data.target[l * d + k]).sum::<f64>() / keep.len() as f64;
            if data.target[j * d + k] - m < 0.0 {
                -1
            } else {
                1
            }
        })
        .collect()
}

/// Rows `ι_κ c_κ(z) >= 0` (or `<= 0` with `flip`) where `c_κ` is the
/// unsigned coordinate contrast along the line.
fn sign_rows(direction: &TestDirection, line: &LineParametrization, flip: bool) -> EventSystem {
    let d = direction.signs.len();
    let mut sys = EventSystem::with_capacity(d);
    for k in 0..d {
        // η already carries ι_κ, so ι_κ c_κ is the κ-th partial sum of ηᵀ(a + bz)
        let (mut ca, mut cb) = (0.0, 0.0);
        for (i, e) in direction.eta.iter().enumerate().skip(k).step_by(d) {
            ca += e * line.a[i];
            cb += e * line.b[i];
        }
        let s = if flip { -1.0 } else { 1.0 };
        // s (ca + cb z) >= 0  <=>  -s cb z <= s ca
        sys.push_linear(-s * cb, s * ca, k);
    }
    sys
}

fn trace_hypothesis(
    data: &GaussianDataset,
    anomalies: &AnomalySet,
    j: usize,
    cov: &BlockCovariance,
    gamma: f64,
    row_mode: bool,
) -> Result<RegionTrace> {
    let shape = PipelineShape {
        n_s: data.n_s(),
        n_t: data.n_t(),
        dim: data.dim,
        gamma,
    };
    let signs = if row_mode {
        coordinate_signs(data, anomalies, j)
    } else {
        vec![1]
    };
    let direction = build_direction_rows(anomalies, j, shape.n_s, shape.n_t, &signs, cov)?;
    let sigma = direction.sigma_eta;
    let line = parametrize_line(&data.stacked(), &direction, cov)?;
    if line.b.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateTest("line direction is zero".into()));
    }
    let half = (WINDOW_SIGMAS * sigma).max(line.z_obs.abs() + sigma);
    let window = Interval::symmetric(half);
    let search = hierarchical_line_search(&line, &shape, anomalies, &window, sigma)?;
    let pc = ParametricCost::new(shape.n_s, shape.n_t, shape.dim, &line.a, &line.b)?;
    let own = cell_at(&line, &pc, &shape, line.z_obs, &window)?;
    if own.detection.anomalies != *anomalies {
        return Err(Error::Consistency(format!(
            "pipeline on the line at z_obs = {} does not reproduce the observed anomalies",
            line.z_obs
        )));
    }
    let mut region = search.region.clone();
    let mut oc_cell = own.interval;
    if row_mode {
        let plus = linear_feasible_interval(&sign_rows(&direction, &line, false), &window);
        let minus = linear_feasible_interval(&sign_rows(&direction, &line, true), &window);
        let signed = TruncationRegion::from_intervals(plus.into_iter().chain(minus).collect(), 0.0);
        region = region.intersect(&signed);
        let plus = plus.ok_or_else(|| Error::Consistency("observed signs infeasible on the line".into()))?;
        oc_cell = oc_cell
            .intersect(&plus)
            .ok_or_else(|| Error::Consistency("observed cell misses the sign set".into()))?;
    }
    let tol = 1e-9 * sigma.max(line.z_obs.abs());
    if !region.contains(line.z_obs, tol) {
        return Err(Error::Consistency(format!(
            "z_obs = {} not covered by the assembled region {:?}",
            line.z_obs,
            region.intervals()
        )));
    }
    Ok(RegionTrace {
        schema_version: SCHEMA_VERSION,
        j,
        z_obs: line.z_obs,
        sigma,
        window,
        anomalies: anomalies.clone(),
        signs,
        cells: search.cells,
        event_region: search.region,
        region,
        oc_cell,
        line,
    })
}

fn finish(trace: RegionTrace, n_t: usize, row_mode: bool) -> Result<InferenceResult> {
    let (z, sigma) = (trace.z_obs, trace.sigma);
    let p_selective = truncated_two_sided_p(z, sigma, &trace.region)?;
    let p_oc = truncated_two_sided_p(z, sigma, &TruncationRegion::single(trace.oc_cell))?;
    Ok(InferenceResult {
        j: trace.j,
        statistic: if row_mode { z.abs() } else { z },
        z_obs: z,
        sigma,
        p_naive: two_sided_p(z / sigma),
        p_bonferroni: bonferroni(z, sigma, n_t),
        p_oc,
        p_selective,
        log_region_mass: log_region_mass(sigma, &trace.region)?,
        cells_visited: trace.cells.len(),
        region: trace.region,
        oc_cell: trace.oc_cell,
    })
}

fn effective_cov(data: &GaussianDataset, anomalies: &AnomalySet, opts: &InferOptions) -> Result<BlockCovariance> {
    if opts.estimate_variance {
        let var = estimated_variance(data, anomalies)?;
        Ok(BlockCovariance::scaled(data.source.len(), data.target.len(), var))
    } else {
        Ok(data.cov.clone())
    }
}

/// Observed anomalies and one outcome per hypothesis; a hypothesis whose
/// search fails carries its own error without sinking the others.
pub fn infer_each(
    data: &GaussianDataset,
    opts: &InferOptions,
    row_mode: bool,
) -> Result<(AnomalySet, Vec<(usize, Result<InferenceResult>)>)> {
    if !row_mode && data.dim != 1 {
        return Err(Error::Config(format!(
            "univariate inference needs dim 1, got {}; use the row-statistic path",
            data.dim
        )));
    }
    let anomalies = observed_anomalies(data, opts.gamma)?;
    let cov = effective_cov(data, &anomalies, opts)?;
    let out = anomalies
        .indices
        .iter()
        .map(|&j| {
            let r = trace_hypothesis(data, &anomalies, j, &cov, opts.gamma, row_mode)
                .and_then(|t| finish(t, data.n_t(), row_mode));
            (j, r)
        })
        .collect();
    Ok((anomalies, out))
}

fn infer_impl(data: &GaussianDataset, opts: &InferOptions, row_mode: bool) -> Result<Vec<InferenceResult>> {
    infer_each(data, opts, row_mode)?.1.into_iter().map(|(_, r)| r).collect()
}

/// Univariate inference with the default options and the given `gamma`.
pub fn infer(data: &GaussianDataset, gamma: f64) -> Result<Vec<InferenceResult>> {
    infer_with(
        data,
        &InferOptions {
            gamma,
            ..InferOptions::default()
        },
    )
}

/// Univariate inference (`dim == 1`).
pub fn infer_with(data: &GaussianDataset, opts: &InferOptions) -> Result<Vec<InferenceResult>> {
    infer_impl(data, opts, false)
}

/// Inference on `Γ_j = Σ_κ |x^t_jκ - mean_κ|` for data of any width.
pub fn infer_multidim(data: &GaussianDataset, opts: &InferOptions) -> Result<Vec<InferenceResult>> {
    infer_impl(data, opts, true)
}

/// Full region trace for hypothesis `j`.
pub fn dump_region(data: &GaussianDataset, j: usize, opts: &InferOptions) -> Result<RegionTrace> {
    let anomalies = observed_anomalies(data, opts.gamma)?;
    if !anomalies.contains(j) {
        return Err(Error::DegenerateTest(format!(
            "target index {j} was not detected (anomalies {:?})",
            anomalies.indices
        )));
    }
    let cov = effective_cov(data, &anomalies, opts)?;
    trace_hypothesis(data, &anomalies, j, &cov, opts.gamma, data.dim > 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{sample_dataset, CovBlock, NoiseSpec};

    fn toy(seed: u64, n_s: usize, n_t: usize) -> GaussianDataset {
        let cov = BlockCovariance::identity(n_s, n_t);
        let mut mt = vec![2.0; n_t];
        mt[0] += 4.0;
        sample_dataset(&vec![0.0; n_s], &mt, 1, &cov, &NoiseSpec::gaussian(), seed).unwrap()
    }

    #[test]
    fn direction_formula() {
        let set = AnomalySet::new(vec![0]);
        let cov = BlockCovariance::identity(2, 3);
        let d = build_direction(&set, 0, 2, 3, &cov).unwrap();
        assert_eq!(d.eta, vec![0.0, 0.0, 1.0, -0.5, -0.5]);
        assert!((d.sigma_eta - 1.5f64.sqrt()).abs() < 1e-15);
        let all = AnomalySet::new(vec![0, 1, 2]);
        assert!(matches!(build_direction(&all, 0, 2, 3, &cov), Err(Error::DegenerateTest(_))));
    }

    #[test]
    fn correlated_sigma_matches_dense() {
        let set = AnomalySet::new(vec![1, 3]);
        let cov = BlockCovariance::new(
            CovBlock::identity(3),
            CovBlock::Dense {
                n: 5,
                data: (0..25).map(|k| 0.5f64.powi(((k / 5) as i32 - (k % 5) as i32).abs())).collect(),
            },
        )
        .unwrap();
        let d = build_direction(&set, 1, 3, 5, &cov).unwrap();
        let full = cov.full();
        let n = 8;
        let mut q = 0.0;
        for r in 0..n {
            for c in 0..n {
                q += d.eta[r] * full[r * n + c] * d.eta[c];
            }
        }
        assert!((d.sigma_eta - q.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn line_identities() {
        let ds = toy(3, 6, 5);
        let set = observed_anomalies(&ds, 3.0).unwrap();
        let j = set.indices[0];
        let dir = build_direction(&set, j, 6, 5, &ds.cov).unwrap();
        let line = parametrize_line(&ds.stacked(), &dir, &ds.cov).unwrap();
        for (x, y) in line.at(line.z_obs).iter().zip(ds.stacked()) {
            assert!((x - y).abs() < 1e-10);
        }
        let dot = |v: &[f64]| dir.eta.iter().zip(v).map(|(e, x)| e * x).sum::<f64>();
        assert!(dot(&line.a).abs() < 1e-10);
        assert!((dot(&line.b) - 1.0).abs() < 1e-10);
        assert!(line.b[..6].iter().all(|v| *v == 0.0));
        let var = dir.sigma_eta.powi(2);
        for (b, e) in line.b.iter().zip(&dir.eta) {
            assert!((b - e / var).abs() < 1e-15);
        }
    }

    #[test]
    fn bonferroni_caps_and_log_path() {
        assert_eq!(bonferroni(0.1, 1.0, 10), 1.0);
        let small = bonferroni(12.0, 1.0, 60);
        let direct = two_sided_p(12.0) * 2f64.powi(60);
        assert!((small - direct).abs() <= 1e-9 * direct);
    }

    #[test]
    fn observed_in_matching_cell_and_tiles() {
        for seed in 0..4 {
            let ds = toy(seed, 8, 5);
            let set = match observed_anomalies(&ds, 3.0) {
                Ok(s) if !s.is_empty() => s,
                _ => continue,
            };
            let tr = dump_region(&ds, set.indices[0], &InferOptions::default()).unwrap();
            assert!(tr.cells.iter().any(|c| c.anomaly_match && c.interval.contains(tr.z_obs, 1e-9)));
            let step = 1e-9 * tr.sigma.max(tr.window.hi) * 4.0;
            assert!((tr.cells[0].interval.lo - tr.window.lo).abs() < 1e-12);
            assert!((tr.cells.last().unwrap().interval.hi - tr.window.hi).abs() < step);
            for w in tr.cells.windows(2) {
                assert!(w[1].interval.lo <= w[0].interval.hi + step, "{:?}", w);
            }
            assert!(tr.region.is_well_formed());
        }
    }

    #[test]
    fn single_source_has_one_basis() {
        // with one source the plan is fixed; only the detector state moves
        let cov = BlockCovariance::identity(1, 3);
        let ds = GaussianDataset::new(vec![0.0], vec![0.0, 0.1, 100.0], 1, cov).unwrap();
        let set = observed_anomalies(&ds, 3.0).unwrap();
        assert_eq!(set.indices, vec![2]);
        let tr = dump_region(&ds, 2, &InferOptions::default()).unwrap();
        assert!(tr.cells.iter().all(|c| c.u == 0));
        let last = tr.region.intervals().last().unwrap();
        assert_eq!(last.hi, tr.window.hi);
        assert!(last.contains(tr.z_obs, 0.0) && tr.oc_cell.hi == tr.window.hi);
    }

    #[test]
    fn symmetric_center_gives_one() {
        let region = TruncationRegion::single(Interval::symmetric(20.0));
        assert_eq!(truncated_two_sided_p(0.0, 1.0, &region).unwrap(), 1.0);
    }

    #[test]
    fn d1_rows_match_univariate() {
        for seed in 0..3 {
            let ds = toy(seed + 10, 10, 6);
            let uni = match infer(&ds, 3.0) {
                Ok(r) => r,
                Err(e) if e.is_degenerate() => continue,
                Err(e) => panic!("{e}"),
            };
            let multi = infer_multidim(&ds, &InferOptions::default()).unwrap();
            assert_eq!(uni.len(), multi.len());
            for (u, m) in uni.iter().zip(&multi) {
                assert!((u.statistic.abs() - m.statistic).abs() < 1e-10);
                assert!((u.p_selective - m.p_selective).abs() < 1e-10, "{} {}", u.p_selective, m.p_selective);
                assert!((u.p_oc - m.p_oc).abs() < 1e-10);
                assert!((u.p_naive - m.p_naive).abs() < 1e-10);
            }
        }
    }
}
