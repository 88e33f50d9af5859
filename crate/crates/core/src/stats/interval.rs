use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval `[lo, hi]` on the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Domain(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    /// Symmetric window `[-half, half]`.
    pub fn symmetric(half: f64) -> Self {
        Self {
            lo: -half.abs(),
            hi: half.abs(),
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, z: f64, tol: f64) -> bool {
        z >= self.lo - tol && z <= self.hi + tol
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

/// Sorted union of pairwise-disjoint closed intervals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TruncationRegion {
    intervals: Vec<Interval>,
}

impl TruncationRegion {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(interval: Interval) -> Self {
        Self {
            intervals: vec![interval],
        }
    }

    /// Builds a region from arbitrary intervals, merging any that overlap or
    /// are separated by at most `merge_tol`.
    pub fn from_intervals(mut intervals: Vec<Interval>, merge_tol: f64) -> Self {
        intervals.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        let mut merged: Vec<Interval> = Vec::with_capacity(intervals.len());
        for iv in intervals {
            match merged.last_mut() {
                Some(last) if iv.lo <= last.hi + merge_tol => {
                    last.hi = last.hi.max(iv.hi);
                }
                _ => merged.push(iv),
            }
        }
        Self { intervals: merged }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(Interval::width).sum()
    }

    pub fn contains(&self, z: f64, tol: f64) -> bool {
        self.intervals.iter().any(|iv| iv.contains(z, tol))
    }

    /// Member interval containing `z`, if any.
    pub fn component_containing(&self, z: f64, tol: f64) -> Option<Interval> {
        self.intervals.iter().copied().find(|iv| iv.contains(z, tol))
    }

    pub fn intersect_interval(&self, other: &Interval) -> Self {
        Self {
            intervals: self
                .intervals
                .iter()
                .filter_map(|iv| iv.intersect(other))
                .collect(),
        }
    }

    pub fn intersect(&self, other: &TruncationRegion) -> Self {
        let mut out = Vec::new();
        for a in &self.intervals {
            for b in &other.intervals {
                if let Some(iv) = a.intersect(b) {
                    out.push(iv);
                }
            }
        }
        Self::from_intervals(out, 0.0)
    }

    /// Checks the sorted, strictly-separated invariant.
    pub fn is_well_formed(&self) -> bool {
        self.intervals.iter().all(|iv| iv.lo <= iv.hi)
            && self.intervals.windows(2).all(|w| w[0].hi < w[1].lo)
    }
}
