//! Oracles shared by the integration tests. None of them call into the
//! solver or the region search they are used to check.

#![allow(dead_code)]

use cadda::engine::{
    dump_region, observed_anomalies, run_pipeline, InferOptions, PipelineShape, PipelineState, WINDOW_SIGMAS,
};
use cadda::mad::AnomalySet;
use cadda::ot::{OtProblem, TransportSolution};
use cadda::stats::{sample_dataset, BlockCovariance, GaussianDataset, NoiseSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Solves `A x = rhs` (n x n, row-major) by partial pivoting; `None` if
/// singular.
pub fn dense_solve(n: usize, mut a: Vec<f64>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            rhs.swap(piv, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (rhs[r] - s) / a[r * n + r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    go(0, n, k, &mut Vec::with_capacity(k), f);
}

/// Minimum objective over every basic feasible solution of the transport
/// polytope, by enumerating all column subsets of size `n_s + n_t - 1`.
pub fn vertex_enumeration_min(n_s: usize, n_t: usize, cost: &[f64]) -> f64 {
    let m = n_s + n_t - 1;
    let mut best = f64::INFINITY;
    combinations(n_s * n_t, m, &mut |cols| {
        // rows: every source marginal, all but the last target marginal
        let mut a = vec![0.0; m * m];
        for (k, &c) in cols.iter().enumerate() {
            let (i, j) = (c / n_t, c % n_t);
            a[i * m + k] = 1.0;
            if j + 1 < n_t {
                a[(n_s + j) * m + k] = 1.0;
            }
        }
        let mut rhs = vec![1.0 / n_s as f64; n_s];
        rhs.extend(std::iter::repeat_n(1.0 / n_t as f64, n_t - 1));
        if let Some(x) = dense_solve(m, a, rhs) {
            if x.iter().all(|v| *v >= -1e-12) {
                let obj: f64 = cols.iter().zip(&x).map(|(&c, v)| cost[c] * v).sum();
                best = best.min(obj);
            }
        }
    });
    best
}

/// Checks primal feasibility, complementary slackness and dual feasibility
/// of `sol` with duals from a dense solve on its basis. Returns the most
/// negative reduced cost.
pub fn optimality_certificate(problem: &OtProblem, sol: &TransportSolution) -> Result<f64, String> {
    let (n_s, n_t) = (problem.n_s, problem.n_t);
    let m = n_s + n_t - 1;
    if sol.basis.len() != m {
        return Err(format!("basis has {} cells, expected {m}", sol.basis.len()));
    }
    for i in 0..n_s {
        let s: f64 = sol.plan[i * n_t..(i + 1) * n_t].iter().sum();
        if (s - 1.0 / n_s as f64).abs() > 1e-9 {
            return Err(format!("row {i} sums to {s}"));
        }
    }
    for j in 0..n_t {
        let s: f64 = (0..n_s).map(|i| sol.plan[i * n_t + j]).sum();
        if (s - 1.0 / n_t as f64).abs() > 1e-9 {
            return Err(format!("column {j} sums to {s}"));
        }
    }
    for (c, v) in sol.plan.iter().enumerate() {
        if *v < -1e-12 || (*v > 0.0 && !sol.basis.contains(&c)) {
            return Err(format!("cell {c} has mass {v} outside the basis or negative"));
        }
    }
    // u_i + v_j = c_ij on the basis, v_{n_t - 1} = 0
    let mut a = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for (k, &c) in sol.basis.iter().enumerate() {
        let (i, j) = (c / n_t, c % n_t);
        a[k * m + i] = 1.0;
        if j + 1 < n_t {
            a[k * m + n_s + j] = 1.0;
        }
        rhs[k] = problem.cost[c];
    }
    let duals = dense_solve(m, a, rhs).ok_or("basis matrix is singular")?;
    let scale = 1.0 + problem.cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let mut worst = f64::INFINITY;
    for c in 0..n_s * n_t {
        let (i, j) = (c / n_t, c % n_t);
        let v = if j + 1 < n_t { duals[n_s + j] } else { 0.0 };
        let rc = problem.cost[c] - duals[i] - v;
        worst = worst.min(rc / scale);
    }
    if worst < -1e-9 {
        return Err(format!("reduced cost {worst} below tolerance"));
    }
    let obj: f64 = sol.plan.iter().zip(&problem.cost).map(|(p, c)| p * c).sum();
    if (obj - sol.objective).abs() > 1e-9 * scale {
        return Err(format!("objective {} but plan costs {obj}", sol.objective));
    }
    Ok(worst)
}

/// Feasible plan from a random positive matrix by alternate row/column
/// rescaling.
pub fn sinkhorn_plan(n_s: usize, n_t: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut t: Vec<f64> = (0..n_s * n_t).map(|_| rng.random::<f64>().powi(3) + 1e-6).collect();
    for _ in 0..2000 {
        for i in 0..n_s {
            let s: f64 = t[i * n_t..(i + 1) * n_t].iter().sum();
            for v in &mut t[i * n_t..(i + 1) * n_t] {
                *v /= s * n_s as f64;
            }
        }
        let mut err: f64 = 0.0;
        for j in 0..n_t {
            let s: f64 = (0..n_s).map(|i| t[i * n_t + j]).sum();
            err = err.max((s - 1.0 / n_t as f64).abs());
            for i in 0..n_s {
                t[i * n_t + j] /= s * n_t as f64;
            }
        }
        if err < 1e-15 {
            break;
        }
    }
    t
}

pub fn shape(ds: &GaussianDataset, gamma: f64) -> PipelineShape {
    PipelineShape {
        n_s: ds.n_s(),
        n_t: ds.n_t(),
        dim: ds.dim,
        gamma,
    }
}

/// Full pipeline from scratch on the stacked vector.
pub fn rerun(y: &[f64], shape: &PipelineShape) -> PipelineState {
    run_pipeline(y, shape).expect("pipeline runs")
}

/// A seeded dataset in the experiment layout (sources at 0, targets at 2)
/// with a couple of shifted targets, redrawn until something is detected.
pub fn detected_dataset(seed: u64, n_s: usize, n_t: usize, dim: usize) -> (GaussianDataset, AnomalySet) {
    let mut r = rng(seed);
    for attempt in 0..100u64 {
        let mut mt = vec![2.0; n_t * dim];
        let shifted = r.random_range(1..=2.min(n_t - 1));
        for j in 0..shifted {
            let row = r.random_range(0..n_t);
            let shift = r.random_range(2.0..6.0) * if j % 2 == 0 { 1.0 } else { -1.0 };
            for v in &mut mt[row * dim..(row + 1) * dim] {
                *v += shift;
            }
        }
        let ds = sample_dataset(
            &vec![0.0; n_s * dim],
            &mt,
            dim,
            &BlockCovariance::identity(n_s * dim, n_t * dim),
            &NoiseSpec::gaussian(),
            seed.wrapping_mul(1000).wrapping_add(attempt),
        )
        .expect("valid dataset");
        if let Ok(set) = observed_anomalies(&ds, 3.0) {
            if !set.is_empty() {
                return (ds, set);
            }
        }
    }
    panic!("no detection for seed {seed}");
}

/// Per-coordinate signs of `target_j - mean(non-anomalous targets)` on a
/// stacked vector, with `sign(0) = +1`.
pub fn row_signs(y: &[f64], n_s: usize, n_t: usize, dim: usize, set: &AnomalySet, j: usize) -> Vec<i8> {
    let t = &y[n_s * dim..];
    let keep: Vec<usize> = (0..n_t).filter(|l| !set.contains(*l)).collect();
    (0..dim)
        .map(|k| {
            let m = keep.iter().map(|l| t[l * dim + k]).sum::<f64>() / keep.len() as f64;
            if t[j * dim + k] - m < 0.0 {
                -1
            } else {
                1
            }
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct GridReport {
    pub checked: usize,
    pub exempt: usize,
    pub in_region: usize,
    pub mismatches: Vec<String>,
}

/// Compares region membership with a from-scratch pipeline run at
/// `points` evenly spaced `z` over `[-20 sigma, 20 sigma]`. Points within
/// `1e-6 sigma` of any cell or region edge are exempt.
pub fn grid_oracle(ds: &GaussianDataset, j: usize, opts: &InferOptions, points: usize) -> GridReport {
    let tr = dump_region(ds, j, opts).expect("region trace");
    let sh = shape(ds, opts.gamma);
    let sigma = tr.sigma;
    let half = WINDOW_SIGMAS * sigma;
    let mut edges: Vec<f64> = tr.cells.iter().flat_map(|c| [c.interval.lo, c.interval.hi]).collect();
    edges.extend(tr.region.intervals().iter().flat_map(|iv| [iv.lo, iv.hi]));
    let mut rep = GridReport::default();
    for k in 0..points {
        let z = -half + 2.0 * half * k as f64 / (points - 1) as f64;
        if edges.iter().any(|e| (z - e).abs() <= 1e-6 * sigma) {
            rep.exempt += 1;
            continue;
        }
        let y = tr.line.at(z);
        let st = rerun(&y, &sh);
        let mut truth = st.detection.anomalies == tr.anomalies;
        if truth && ds.dim > 1 {
            let s = row_signs(&y, sh.n_s, sh.n_t, sh.dim, &tr.anomalies, j);
            let flipped: Vec<i8> = tr.signs.iter().map(|v| -v).collect();
            truth = s == tr.signs || s == flipped;
        }
        let claim = tr.region.contains(z, 0.0);
        rep.checked += 1;
        rep.in_region += usize::from(claim);
        if claim != truth {
            rep.mismatches.push(format!("z = {z}: region says {claim}, pipeline says {truth}"));
        }
    }
    rep
}

#[derive(Debug, Default)]
pub struct LocalReport {
    pub cells: usize,
    pub narrow: usize,
    pub interior_points: usize,
    pub boundaries: usize,
    pub failures: Vec<String>,
}

/// Re-runs the pipeline at `interior` random points of every visited cell
/// (kept `1e-6 sigma` away from its ends) and just outside each finite
/// end. The reference state is taken at the golden-section point, since
/// midpoints of symmetric cells can be exact crossings. The outside probe
/// sits `1e-4 sigma` past the edge, or halfway into the neighbouring cell
/// when that one is narrower.
pub fn local_correctness(
    ds: &GaussianDataset,
    j: usize,
    opts: &InferOptions,
    interior: usize,
    r: &mut impl Rng,
) -> LocalReport {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let tr = dump_region(ds, j, opts).expect("region trace");
    let sh = shape(ds, opts.gamma);
    let sigma = tr.sigma;
    let margin = 1e-6 * sigma;
    let mut rep = LocalReport::default();
    for (k, c) in tr.cells.iter().enumerate() {
        let iv = c.interval;
        rep.cells += 1;
        if iv.width() <= 2.0 * margin {
            rep.narrow += 1;
            continue;
        }
        let reference = rerun(&tr.line.at(iv.lo + GOLDEN * iv.width()), &sh);
        if (reference.detection.anomalies == tr.anomalies) != c.anomaly_match {
            rep.failures.push(format!("cell ({}, {}) has the wrong anomaly_match", c.u, c.v));
        }
        for _ in 0..interior {
            let z = r.random_range(iv.lo + margin..=iv.hi - margin);
            rep.interior_points += 1;
            if rerun(&tr.line.at(z), &sh) != reference {
                rep.failures.push(format!("cell ({}, {}) {:?}: state differs at z = {z}", c.u, c.v, iv));
            }
        }
        let step = 1e-4 * sigma;
        let before = k.checked_sub(1).map(|p| tr.cells[p].interval.lo);
        let after = tr.cells.get(k + 1).map(|n| n.interval.hi);
        let probes = [
            (iv.lo, before.map(|b| iv.lo - step.min(0.5 * (iv.lo - b)))),
            (iv.hi, after.map(|a| iv.hi + step.min(0.5 * (a - iv.hi)))),
        ];
        for (edge, out) in probes {
            let Some(out) = out else { continue };
            if edge <= tr.window.lo || edge >= tr.window.hi {
                continue;
            }
            rep.boundaries += 1;
            if rerun(&tr.line.at(out), &sh) == reference {
                rep.failures.push(format!("cell ({}, {}): nothing changes across {edge}", c.u, c.v));
            }
        }
    }
    rep
}
