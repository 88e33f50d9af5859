//! Median-absolute-deviation detection on `(adapted source; target)` and
//! the linear inequalities in `z` that pin every comparison it makes.
//!
//! Conventions: the median of an even-length vector is the lower middle
//! order statistic, ties resolve to the lowest index, `sign(0) = +1`, and a
//! point exactly on the band edge is not an anomaly. "Exactly" means up to
//! a relative `1e-12`, so duplicated points (an adapted source carrying a
//! single target) do not flip indices on rounding noise.
//!
//! For `dim > 1` the detector scores each instance by the L1 norm of its
//! centered row, `Σ_κ |Ỹ_kκ - mean_κ|`, and runs MAD on the scores. With
//! the coordinate signs held fixed the score is linear in the data, so the
//! whole detector stays a linear event along the line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventSystem, SLACK_TOL};
use crate::ot::AdaptationOperator;

pub const DEFAULT_GAMMA: f64 = 3.0;

/// Sorted target-domain anomaly indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct AnomalySet {
    pub indices: Vec<usize>,
}

impl AnomalySet {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }
}

/// Every decision MAD took on one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadTrace {
    pub k1: usize,
    pub k2: usize,
    pub signs: Vec<i8>,
    pub gamma: f64,
    pub flags: Vec<bool>,
    pub n_s: usize,
}

impl MadTrace {
    pub fn anomalies(&self) -> AnomalySet {
        AnomalySet::new(
            self.flags[self.n_s..]
                .iter()
                .enumerate()
                .filter(|(_, f)| **f)
                .map(|(j, _)| j)
                .collect(),
        )
    }
}

/// Relative gap under which two values count as tied.
const TIE_TOL: f64 = 1e-12;

fn tie_tol(values: &[f64]) -> f64 {
    TIE_TOL * (1.0 + values.iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

/// `-1` below `-tol`, `+1` otherwise.
fn sign(x: f64, tol: f64) -> i8 {
    if x < -tol {
        -1
    } else {
        1
    }
}

/// Index of the lower median, lowest index among values within `tol`.
fn median_index(values: &[f64], tol: f64) -> usize {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let m = order[(values.len() - 1) / 2];
    let v = values[m];
    (0..values.len()).find(|&k| (values[k] - v).abs() <= tol).unwrap_or(m)
}

/// MAD over a combined vector whose first `n_s` entries are the adapted
/// source. Never fails; callers decide what a full target flag means.
pub fn mad_trace(values: &[f64], n_s: usize, gamma: f64) -> MadTrace {
    let tt = tie_tol(values);
    let k1 = median_index(values, tt);
    let center = values[k1];
    let signs: Vec<i8> = values.iter().map(|v| sign(v - center, tt)).collect();
    let dev: Vec<f64> = values
        .iter()
        .zip(&signs)
        .map(|(v, s)| f64::from(*s) * (v - center))
        .collect();
    let k2 = median_index(&dev, tt);
    let half = gamma * dev[k2];
    let (lo, hi) = (center - half, center + half);
    // points sitting on an edge up to rounding stay inside
    let tol = BAND_TOL * (1.0 + center.abs() + half);
    let flags = values.iter().map(|&v| v < lo - tol || v > hi + tol).collect();
    MadTrace {
        k1,
        k2,
        signs,
        gamma,
        flags,
        n_s,
    }
}

/// Runs MAD on `(adapted_source; target)` and keeps the target flags.
pub fn run_mad(adapted_source: &[f64], target: &[f64], gamma: f64) -> Result<(AnomalySet, MadTrace)> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    if adapted_source.len() + target.len() < 3 {
        return Err(Error::Config("MAD needs at least three points".into()));
    }
    let values: Vec<f64> = adapted_source.iter().chain(target).copied().collect();
    let trace = mad_trace(&values, adapted_source.len(), gamma);
    let set = trace.anomalies();
    if !target.is_empty() && set.len() == target.len() {
        return Err(Error::DegenerateDetection { n_t: target.len() });
    }
    Ok((set, trace))
}

/// Affine function `alpha + beta z` of the line parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Affine {
    alpha: f64,
    beta: f64,
}

impl Affine {
    fn diff(values: (&[f64], &[f64]), k: usize, l: usize) -> Self {
        Self {
            alpha: values.0[k] - values.0[l],
            beta: values.1[k] - values.1[l],
        }
    }
    fn scale(self, c: f64) -> Self {
        Self {
            alpha: c * self.alpha,
            beta: c * self.beta,
        }
    }
    fn minus(self, o: Affine) -> Self {
        Self {
            alpha: self.alpha - o.alpha,
            beta: self.beta - o.beta,
        }
    }
}

/// Row tags identifying which comparison an inequality encodes.
pub mod tag {
    pub const MEDIAN: usize = 1;
    pub const SIGN: usize = 2;
    pub const DEVIATION: usize = 3;
    pub const BAND: usize = 4;
    pub const COORD_SIGN: usize = 5;
}

/// Relative slack below which a point counts as on the band edge.
const BAND_TOL: f64 = 1e-12;

/// Crossing roots this close are one event.
const ROOT_TIE: f64 = 1e-12;

/// `k2` sits in a block of `twins` bitwise-identical deviations and stays
/// put while the median slot `slot` falls inside that block. `others` holds
/// every other deviation minus the block's. Returns the `z` range around
/// `z` over which the count of deviations below the block stays in range.
fn tie_block_interval(others: &[Affine], twins: usize, slot: usize, z: f64) -> (f64, f64) {
    let at = |f: &Affine| f.alpha + f.beta * z;
    let below0 = others.iter().filter(|f| at(f) < 0.0).count() as i64;
    let ok = |c: i64| c <= slot as i64 && c + twins as i64 > slot as i64;
    // (root, change in the below-count when crossing it moving right)
    let mut cross: Vec<(f64, i64)> = others
        .iter()
        .filter(|f| f.beta != 0.0)
        .map(|f| (-f.alpha / f.beta, if f.beta > 0.0 { -1 } else { 1 }))
        .collect();
    cross.sort_by(|a, b| a.0.total_cmp(&b.0));
    // walks the roots outward from z; roots at the same z move together
    let walk = |roots: Vec<(f64, i64)>, sgn: i64| -> f64 {
        let mut c = below0;
        let mut i = 0;
        while i < roots.len() {
            let r = roots[i].0;
            while i < roots.len() && (roots[i].0 - r).abs() <= ROOT_TIE * (1.0 + r.abs()) {
                c += roots[i].1 * sgn;
                i += 1;
            }
            if !ok(c) {
                return r;
            }
        }
        sgn as f64 * f64::INFINITY
    };
    let hi = walk(cross.iter().copied().filter(|c| c.0 > z).collect(), 1);
    let lo = walk(cross.iter().rev().copied().filter(|c| c.0 < z).collect(), -1);
    (lo, hi)
}

/// Coefficient sizes below which an affine function is zero up to rounding.
#[derive(Debug, Clone, Copy)]
struct Noise {
    alpha: f64,
    beta: f64,
}

impl Noise {
    fn of(alpha: &[f64], beta: &[f64]) -> Self {
        Self {
            alpha: tie_tol(alpha),
            beta: tie_tol(beta),
        }
    }
    fn scale(self, c: f64) -> Self {
        Self {
            alpha: c * self.alpha,
            beta: c * self.beta,
        }
    }
    fn covers(self, f: Affine) -> bool {
        f.alpha.abs() <= self.alpha && f.beta.abs() <= self.beta
    }
}

/// Pushes `f(z) <= 0` unless `f` vanishes up to `noise`: such a row
/// compares tied points, whose decisions the tie rules already fix.
fn push_row(sys: &mut EventSystem, f: Affine, noise: Noise, tag: usize) {
    if !noise.covers(f) {
        push_nonpositive(sys, f, tag);
    }
}

fn push_nonpositive(sys: &mut EventSystem, f: Affine, tag: usize) {
    // f(z) <= 0  <=>  beta z <= -alpha
    sys.push_linear(f.beta, -f.alpha, tag);
}

/// Linear rows that hold exactly where MAD on `alpha + beta z` repeats the
/// decisions in `trace`: the median index, the signs, the deviation
/// median, and every band membership.
pub fn mad_event_system(trace: &MadTrace, alpha: &[f64], beta: &[f64], z_current: f64) -> Result<EventSystem> {
    let n = alpha.len();
    if beta.len() != n || trace.flags.len() != n {
        return Err(Error::Dimension(format!(
            "trace covers {} points, line has {}/{}",
            trace.flags.len(),
            n,
            beta.len()
        )));
    }
    let vals = (alpha, beta);
    let (k1, k2) = (trace.k1, trace.k2);
    let cur = |k: usize| alpha[k] + beta[k] * z_current;
    let s = |k: usize| f64::from(trace.signs[k]);
    let dev = |k: usize| Affine::diff(vals, k, k1).scale(s(k));
    let d2 = dev(k2);
    let noise = Noise::of(alpha, beta);
    let mut sys = EventSystem::with_capacity(7 * n);

    // median: which points sit below and above Ỹ_k1
    for k in 0..n {
        if k == k1 {
            continue;
        }
        let (yk, yc) = (cur(k), cur(k1));
        if yk <= yc {
            push_row(&mut sys, Affine::diff(vals, k, k1), noise, tag::MEDIAN);
        }
        if yk >= yc {
            push_row(&mut sys, Affine::diff(vals, k1, k), noise, tag::MEDIAN);
        }
    }
    // signs: s_k (Ỹ_k - Ỹ_k1) >= 0
    for k in 0..n {
        push_row(&mut sys, dev(k).scale(-1.0), noise, tag::SIGN);
    }
    // deviation median
    // k2 only moves when the median slot leaves the block of deviations
    // equal to its own; pairwise rows would also cut at crossings that
    // cancel or stay inside the block
    let twin = |d: &Affine| noise.covers(d.minus(d2));
    let twins = (0..n).map(dev).filter(|d| twin(d)).count();
    let others: Vec<Affine> = (0..n).map(dev).filter(|d| !twin(d)).map(|d| d.minus(d2)).collect();
    let (lo, hi) = tie_block_interval(&others, twins, (n - 1) / 2, z_current);
    if hi.is_finite() {
        sys.push_linear(1.0, hi, tag::DEVIATION);
    }
    if lo.is_finite() {
        sys.push_linear(-1.0, -lo, tag::DEVIATION);
    }
    // band: upper edge Ỹ_k1 + γ D_k2, lower edge Ỹ_k1 - γ D_k2
    let g = trace.gamma;
    let band_noise = noise.scale(1.0 + g);
    for k in 0..n {
        let rel = Affine::diff(vals, k, k1);
        let above = rel.minus(d2.scale(g));
        let below = rel.scale(-1.0).minus(d2.scale(g));
        if trace.flags[k] {
            if cur(k) > cur(k1) {
                push_row(&mut sys, above.scale(-1.0), band_noise, tag::BAND);
            } else {
                push_row(&mut sys, below.scale(-1.0), band_noise, tag::BAND);
            }
        } else {
            push_row(&mut sys, above, band_noise, tag::BAND);
            push_row(&mut sys, below, band_noise, tag::BAND);
        }
    }
    check_slack(&sys, z_current)?;
    Ok(sys)
}

fn check_slack(sys: &EventSystem, z: f64) -> Result<()> {
    let worst = sys.min_relative_slack(z);
    if worst < -SLACK_TOL {
        return Err(Error::Consistency(format!(
            "detector trace does not match data at z = {z} (relative slack {worst:e})"
        )));
    }
    Ok(())
}

/// Same as [`mad_event_system`] with the line given before adaptation.
pub fn mad_event_system_theta(
    trace: &MadTrace,
    theta: &AdaptationOperator,
    a: &[f64],
    b: &[f64],
    z_current: f64,
) -> Result<EventSystem> {
    let alpha = theta.apply(a, 1)?;
    let beta = theta.apply(b, 1)?;
    mad_event_system(trace, &alpha, &beta, z_current)
}

/// Full detector state on adapted data of any width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub trace: MadTrace,
    /// Signs of the centered coordinates, empty when `dim == 1`.
    pub coord_signs: Vec<i8>,
    pub anomalies: AnomalySet,
}

/// Column means and per-row L1 scores of centered rows.
fn l1_scores(values: &[f64], n: usize, dim: usize) -> (Vec<f64>, Vec<i8>) {
    let mut mean = vec![0.0; dim];
    for row in values.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let tt = tie_tol(values);
    let mut signs = Vec::with_capacity(n * dim);
    let scores = values
        .chunks(dim)
        .map(|row| {
            row.iter()
                .zip(&mean)
                .map(|(v, m)| {
                    let c = v - m;
                    signs.push(sign(c, tt));
                    c.abs()
                })
                .sum()
        })
        .collect();
    (scores, signs)
}

/// Runs the detector on stacked `(adapted source; target)` rows of width
/// `dim`. Raw values are used when `dim == 1`, L1 scores otherwise.
pub fn detect(stacked: &[f64], n_s: usize, dim: usize, gamma: f64) -> Detection {
    let n = stacked.len() / dim;
    if dim == 1 {
        let trace = mad_trace(stacked, n_s, gamma);
        let anomalies = trace.anomalies();
        return Detection {
            trace,
            coord_signs: Vec::new(),
            anomalies,
        };
    }
    let (scores, coord_signs) = l1_scores(stacked, n, dim);
    let trace = mad_trace(&scores, n_s, gamma);
    let anomalies = trace.anomalies();
    Detection {
        trace,
        coord_signs,
        anomalies,
    }
}

/// Event rows for [`detect`] along `alpha + beta z` (stacked rows of width
/// `dim`, already adapted).
pub fn detection_event_system(
    det: &Detection,
    alpha: &[f64],
    beta: &[f64],
    dim: usize,
    z_current: f64,
) -> Result<EventSystem> {
    if dim == 1 {
        return mad_event_system(&det.trace, alpha, beta, z_current);
    }
    let n = alpha.len() / dim;
    if det.coord_signs.len() != n * dim || beta.len() != alpha.len() {
        return Err(Error::Dimension("detection does not match the line".into()));
    }
    let inv = 1.0 / n as f64;
    let col_mean = |v: &[f64], k: usize| -> f64 { v.chunks(dim).map(|r| r[k]).sum::<f64>() * inv };
    let ma: Vec<f64> = (0..dim).map(|k| col_mean(alpha, k)).collect();
    let mb: Vec<f64> = (0..dim).map(|k| col_mean(beta, k)).collect();
    let noise = Noise::of(alpha, beta);
    let mut sys = EventSystem::with_capacity(n * dim + 7 * n);
    let mut sa = vec![0.0; n];
    let mut sb = vec![0.0; n];
    for i in 0..n {
        for k in 0..dim {
            let idx = i * dim + k;
            let sg = f64::from(det.coord_signs[idx]);
            let c = Affine {
                alpha: alpha[idx] - ma[k],
                beta: beta[idx] - mb[k],
            }
            .scale(sg);
            push_row(&mut sys, c.scale(-1.0), noise, tag::COORD_SIGN);
            sa[i] += c.alpha;
            sb[i] += c.beta;
        }
    }
    check_slack(&sys, z_current)?;
    sys.extend(&mad_event_system(&det.trace, &sa, &sb, z_current)?);
    Ok(sys)
}
