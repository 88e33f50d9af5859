//! Inequality systems in the line parameter `z` and the intervals they cut.
//!
//! Every row reads `w + r z + o z^2 >= 0`. Linear systems written as
//! `p z <= q` are stored with `w = q`, `r = -p`, `o = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Interval;

/// Feasibility slack tolerated at the current point, relative to row scale.
pub const SLACK_TOL: f64 = 1e-8;
/// Relative deadband for treating a leading coefficient as zero.
pub const DEADBAND: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSystem {
    pub w: Vec<f64>,
    pub r: Vec<f64>,
    pub o: Vec<f64>,
    /// Caller-defined tag per row (cell index for transport rows).
    pub labels: Vec<usize>,
}

impl EventSystem {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            w: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            o: Vec::with_capacity(n),
            labels: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn push_quadratic(&mut self, w: f64, r: f64, o: f64, label: usize) {
        self.w.push(w);
        self.r.push(r);
        self.o.push(o);
        self.labels.push(label);
    }

    /// Appends `p z <= q`.
    pub fn push_linear(&mut self, p: f64, q: f64, label: usize) {
        self.push_quadratic(q, -p, 0.0, label);
    }

    pub fn extend(&mut self, other: &EventSystem) {
        self.w.extend_from_slice(&other.w);
        self.r.extend_from_slice(&other.r);
        self.o.extend_from_slice(&other.o);
        self.labels.extend_from_slice(&other.labels);
    }

    /// For linear rows, the `p` of `p z <= q`.
    pub fn p(&self, k: usize) -> f64 {
        -self.r[k]
    }

    /// For linear rows, the `q` of `p z <= q`.
    pub fn q(&self, k: usize) -> f64 {
        self.w[k]
    }

    pub fn value(&self, k: usize, z: f64) -> f64 {
        self.w[k] + z * (self.r[k] + z * self.o[k])
    }

    /// Smallest row value at `z`, scaled by each row's magnitude.
    pub fn min_relative_slack(&self, z: f64) -> f64 {
        (0..self.len())
            .map(|k| self.value(k, z) / row_scale(self.w[k], self.r[k], self.o[k], z))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_linear(&self) -> bool {
        self.o.iter().all(|o| *o == 0.0)
    }
}

fn row_scale(w: f64, r: f64, o: f64, z: f64) -> f64 {
    1f64.max(w.abs() + (r * z).abs() + (o * z * z).abs())
}

/// The interval cut out around `z`, with the labels of the rows that set
/// each finite end (`None` when the window end binds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedInterval {
    pub interval: Interval,
    pub lo_binding: Option<usize>,
    pub hi_binding: Option<usize>,
}

/// Component of `{t : w + r t + o t^2 >= 0}` containing `z`, as `(lo, hi)`
/// with infinite ends allowed. `z` is assumed feasible up to tolerance; a
/// root that lands on the wrong side of `z` by rounding is pulled onto `z`.
fn row_component(w: f64, r: f64, o: f64, z: f64, reach: f64) -> (f64, f64) {
    let scale = w.abs() + r.abs() * reach + o.abs() * reach * reach;
    let quad = o.abs() * reach * reach > DEADBAND * scale;
    let lin = r.abs() * reach > DEADBAND * scale;
    if !quad && !lin {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    if !quad {
        let root = -w / r;
        return if r > 0.0 {
            (root.min(z), f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, root.max(z))
        };
    }
    let disc = r * r - 4.0 * o * w;
    if disc <= 0.0 {
        return if o > 0.0 {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            // never positive; feasible only up to tolerance at the tangent point
            (z, z)
        };
    }
    let sq = disc.sqrt();
    let q = -0.5 * (r + r.signum() * sq);
    let (mut t1, mut t2) = (q / o, if q != 0.0 { w / q } else { q / o });
    if t1 > t2 {
        std::mem::swap(&mut t1, &mut t2);
    }
    if o > 0.0 {
        if z <= 0.5 * (t1 + t2) {
            (f64::NEG_INFINITY, t1.max(z))
        } else {
            (t2.min(z), f64::INFINITY)
        }
    } else {
        (t1.min(z), t2.max(z))
    }
}

/// Intersects the per-row components around `z` and clips to `window`.
pub fn quadratic_system_interval(system: &EventSystem, z: f64, window: &Interval) -> Result<BoundedInterval> {
    if !window.contains(z, 0.0) {
        return Err(Error::Numerical(format!(
            "current point {z} outside search window [{}, {}]",
            window.lo, window.hi
        )));
    }
    let reach = window.lo.abs().max(window.hi.abs()).max(z.abs()).max(1.0);
    let (mut lo, mut hi) = (window.lo, window.hi);
    let (mut lo_binding, mut hi_binding) = (None, None);
    for k in 0..system.len() {
        let (w, r, o) = (system.w[k], system.r[k], system.o[k]);
        let v = w + z * (r + z * o);
        if v < -SLACK_TOL * row_scale(w, r, o, z) {
            return Err(Error::Numerical(format!(
                "row {k} (label {}) violated at z = {z}: value {v:e}",
                system.labels[k]
            )));
        }
        let (a, b) = row_component(w, r, o, z, reach);
        if a > lo {
            lo = a;
            lo_binding = Some(system.labels[k]);
        }
        if b < hi {
            hi = b;
            hi_binding = Some(system.labels[k]);
        }
    }
    if lo > hi {
        return Err(Error::Numerical(format!("empty interval [{lo}, {hi}] around {z}")));
    }
    Ok(BoundedInterval {
        interval: Interval { lo, hi },
        lo_binding,
        hi_binding,
    })
}

/// Interval of a linear system `p z <= q` around a feasible `z`.
pub fn linear_system_interval(system: &EventSystem, z: f64, window: &Interval) -> Result<BoundedInterval> {
    if !system.is_linear() {
        return Err(Error::Numerical("linear interval requested for a quadratic system".into()));
    }
    quadratic_system_interval(system, z, window)
}

/// Feasible set of a linear system within `window`, or `None` if empty.
/// Unlike [`linear_system_interval`] no reference point is needed.
pub fn linear_feasible_interval(system: &EventSystem, window: &Interval) -> Option<Interval> {
    let reach = window.lo.abs().max(window.hi.abs()).max(1.0);
    let (mut lo, mut hi) = (window.lo, window.hi);
    for k in 0..system.len() {
        let (p, q) = (system.p(k), system.q(k));
        if p.abs() * reach <= DEADBAND * (q.abs() + p.abs() * reach) {
            if q < -SLACK_TOL * q.abs().max(1.0) {
                return None;
            }
            continue;
        }
        if p > 0.0 {
            hi = hi.min(q / p);
        } else {
            lo = lo.max(q / p);
        }
    }
    (lo <= hi).then_some(Interval { lo, hi })
}
