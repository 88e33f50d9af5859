//! Primal transportation simplex over a spanning-tree basis.
//!
//! Marginals are scaled to integers (each source supplies `n_t` units, each
//! target demands `n_s`) and perturbed: every source gets `+ε` and the last
//! target `+n_s ε`. Flows are carried as exact `(units, ε-coefficient)` pairs
//! and compared lexicographically. The perturbed polytope is nondegenerate,
//! so every pivot makes progress and, for costs without ties, the optimal
//! basis is unique. That uniqueness lets a warm-started solve and a cold
//! solve agree on the basis, not just on the plan.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::problem::OtProblem;
use crate::error::{Error, Result};

/// Flow in units of `1/(n_s n_t)` plus an infinitesimal `ε` coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub(crate) struct Lex {
    units: i64,
    eps: i64,
}

impl Lex {
    fn sub(self, o: Lex) -> Lex {
        Lex {
            units: self.units - o.units,
            eps: self.eps - o.eps,
        }
    }
    fn add(self, o: Lex) -> Lex {
        Lex {
            units: self.units + o.units,
            eps: self.eps + o.eps,
        }
    }
    fn is_negative(self) -> bool {
        self < Lex::default()
    }
}

/// An optimal vertex of the transport polytope with its basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportSolution {
    pub n_s: usize,
    pub n_t: usize,
    /// Row-major plan `T̂` (`n_s x n_t`).
    pub plan: Vec<f64>,
    /// Sorted basic cell indices (`i * n_t + j`), `n_s + n_t - 1` of them.
    pub basis: Vec<usize>,
    pub objective: f64,
    /// Pivots used by the solve.
    pub pivots: usize,
    /// Unperturbed flow of each basic cell in units of `1/(n_s n_t)`.
    #[serde(skip)]
    pub(crate) units: Vec<i64>,
}

impl TransportSolution {
    /// `n_s T̂[i, j]` for basic cells, exactly `units / n_t`.
    pub fn scaled_weights(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n_t = self.n_t;
        self.basis
            .iter()
            .zip(&self.units)
            .filter(|(_, u)| **u != 0)
            .map(move |(&c, &u)| (c / n_t, c % n_t, u as f64 / n_t as f64))
    }

    pub fn support(&self) -> Vec<usize> {
        self.basis
            .iter()
            .zip(&self.units)
            .filter(|(_, u)| **u != 0)
            .map(|(c, _)| *c)
            .collect()
    }
}

/// Node potentials (duals) with the last target's potential fixed at zero;
/// the reduced cost of cell `(i, j)` is `c_ij - pot[i] - pot[n_s + j]`.
pub(crate) fn potentials(n_s: usize, n_t: usize, basis: &[usize], cost: &[f64]) -> Result<Vec<f64>> {
    let n = n_s + n_t;
    let adj = adjacency(n_s, n_t, basis);
    let mut pot = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    let root = n - 1;
    pot[root] = 0.0;
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    let mut reached = 1;
    while let Some(node) = queue.pop_front() {
        for &(next, cell) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                pot[next] = cost[cell] - pot[node];
                reached += 1;
                queue.push_back(next);
            }
        }
    }
    if reached != n || basis.len() != n - 1 {
        return Err(Error::BasisIntegrity(format!(
            "basis of {} cells reaches {reached} of {n} nodes; not a spanning tree",
            basis.len()
        )));
    }
    Ok(pot)
}

fn adjacency(n_s: usize, n_t: usize, basis: &[usize]) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); n_s + n_t];
    for &cell in basis {
        let (i, j) = (cell / n_t, cell % n_t);
        adj[i].push((n_s + j, cell));
        adj[n_s + j].push((i, cell));
    }
    adj
}

fn supplies(n_s: usize, n_t: usize) -> Vec<Lex> {
    // positive for sources, negative (demand) for targets
    let mut s = vec![Lex { units: n_t as i64, eps: 1 }; n_s];
    s.extend((0..n_t).map(|j| Lex {
        units: -(n_s as i64),
        eps: if j == n_t - 1 { -(n_s as i64) } else { 0 },
    }));
    s
}

/// Flows of a basis by leaf elimination. Fails if the basis is not a
/// spanning tree or is infeasible for the perturbed marginals.
fn basis_flows(n_s: usize, n_t: usize, basis: &[usize]) -> Result<Vec<Lex>> {
    let n = n_s + n_t;
    if basis.len() != n - 1 {
        return Err(Error::BasisIntegrity(format!(
            "basis has {} cells, expected {}",
            basis.len(),
            n - 1
        )));
    }
    let adj = adjacency(n_s, n_t, basis);
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut residual = supplies(n_s, n_t);
    let mut done = vec![false; basis.len()];
    let pos: std::collections::HashMap<usize, usize> =
        basis.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let mut flows = vec![Lex::default(); basis.len()];
    let mut stack: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    let mut assigned = 0;
    while let Some(leaf) = stack.pop() {
        if degree[leaf] != 1 {
            continue;
        }
        let Some(&(other, cell)) = adj[leaf].iter().find(|(_, c)| !done[pos[c]]) else {
            continue;
        };
        let k = pos[&cell];
        done[k] = true;
        assigned += 1;
        // flow leaves sources and enters targets
        let f = if leaf < n_s { residual[leaf] } else { Lex::default().sub(residual[leaf]) };
        flows[k] = f;
        residual[leaf] = Lex::default();
        if other < n_s {
            residual[other] = residual[other].sub(f);
        } else {
            residual[other] = residual[other].add(f);
        }
        degree[leaf] -= 1;
        degree[other] -= 1;
        if degree[other] == 1 {
            stack.push(other);
        }
    }
    if assigned != basis.len() || residual.iter().any(|r| *r != Lex::default()) {
        return Err(Error::BasisIntegrity("basis is not a spanning tree".into()));
    }
    if flows.iter().any(|f| f.is_negative()) {
        return Err(Error::BasisIntegrity("basis is infeasible for the marginals".into()));
    }
    Ok(flows)
}

fn north_west_corner(problem: &OtProblem) -> Vec<usize> {
    let (n_s, n_t) = (problem.n_s, problem.n_t);
    let mut rows: Vec<usize> = (0..n_s).collect();
    rows.sort_by(|&a, &b| problem.source_keys[a].total_cmp(&problem.source_keys[b]).then(a.cmp(&b)));
    let mut cols: Vec<usize> = (0..n_t).collect();
    cols.sort_by(|&a, &b| problem.target_keys[a].total_cmp(&problem.target_keys[b]).then(a.cmp(&b)));
    let sup = supplies(n_s, n_t);
    let mut basis = Vec::with_capacity(n_s + n_t - 1);
    let (mut ri, mut ci) = (0, 0);
    let mut s_rem = sup[rows[0]];
    let mut d_rem = Lex::default().sub(sup[n_s + cols[0]]);
    loop {
        basis.push(rows[ri] * n_t + cols[ci]);
        if ri == n_s - 1 && ci == n_t - 1 {
            break;
        }
        // nondegenerate: remaining supply and demand never tie before the end
        if s_rem < d_rem && ri + 1 < n_s {
            d_rem = d_rem.sub(s_rem);
            ri += 1;
            s_rem = sup[rows[ri]];
        } else {
            s_rem = s_rem.sub(d_rem);
            ci += 1;
            d_rem = Lex::default().sub(sup[n_s + cols[ci]]);
        }
    }
    basis
}

/// Pricing tolerance relative to the cost scale.
pub(crate) fn pricing_tolerance(cost: &[f64]) -> f64 {
    1e-12 * (1.0 + cost.iter().fold(0.0f64, |m, c| m.max(c.abs())))
}

/// Solves from a cold start.
pub fn solve_ot(problem: &OtProblem) -> Result<TransportSolution> {
    solve_ot_from(problem, None, None)
}

/// Solves starting from `warm` (any feasible spanning-tree basis) if given.
/// `force` names a nonbasic cell to bring in first unless its reduced cost
/// is clearly positive; the line search uses it to step across a boundary
/// where that cell's reduced cost crosses zero.
pub fn solve_ot_from(
    problem: &OtProblem,
    warm: Option<&[usize]>,
    force: Option<usize>,
) -> Result<TransportSolution> {
    let (n_s, n_t) = (problem.n_s, problem.n_t);
    let n = n_s + n_t;
    let mut basis: Vec<usize> = match warm {
        Some(b) => b.to_vec(),
        None => north_west_corner(problem),
    };
    let mut flows = basis_flows(n_s, n_t, &basis)?;
    let mut in_basis = vec![false; problem.n_cells()];
    for &c in &basis {
        in_basis[c] = true;
    }
    let tol = pricing_tolerance(&problem.cost);
    let cap = 10 * problem.n_cells().max(1);
    let mut pivots = 0;
    let mut forced = force.filter(|&c| c < problem.n_cells() && !in_basis[c]);

    loop {
        let pot = potentials(n_s, n_t, &basis, &problem.cost)?;
        let reduced = |c: usize| problem.cost[c] - pot[c / n_t] - pot[n_s + c % n_t];
        let entering = match forced.take() {
            Some(c) if reduced(c) <= tol => Some(c),
            _ => {
                let mut best: Option<(usize, f64)> = None;
                for c in 0..problem.n_cells() {
                    if in_basis[c] {
                        continue;
                    }
                    let d = reduced(c);
                    if d < -tol && best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((c, d));
                    }
                }
                best.map(|(c, _)| c)
            }
        };
        let Some(enter) = entering else { break };
        if pivots >= cap {
            return Err(Error::Solver(cap));
        }
        pivots += 1;

        // path in the tree from source node i to target node n_s + j
        let (ei, ej) = (enter / n_t, enter % n_t);
        let adj = adjacency(n_s, n_t, &basis);
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[ei] = true;
        let mut queue = VecDeque::from([ei]);
        let goal = n_s + ej;
        while let Some(v) = queue.pop_front() {
            if v == goal {
                break;
            }
            for &(next, cell) in &adj[v] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((v, cell));
                    queue.push_back(next);
                }
            }
        }
        let mut path_cells = Vec::new();
        let mut v = goal;
        while let Some((p, cell)) = parent[v] {
            path_cells.push(cell);
            v = p;
        }
        if v != ei {
            return Err(Error::BasisIntegrity("entering cell not connected to basis".into()));
        }
        path_cells.reverse();
        // cells at odd positions along the path (1st, 3rd, ...) lose flow
        let pos_of = |cell: usize| basis.iter().position(|&c| c == cell).expect("basic cell");
        let mut leave: Option<(usize, Lex)> = None;
        for (k, &cell) in path_cells.iter().enumerate() {
            if k % 2 == 0 {
                let f = flows[pos_of(cell)];
                let better = match leave {
                    None => true,
                    Some((lc, lf)) => f < lf || (f == lf && cell < lc),
                };
                if better {
                    leave = Some((cell, f));
                }
            }
        }
        let (leave_cell, theta) = leave.expect("cycle has a decreasing cell");
        for (k, &cell) in path_cells.iter().enumerate() {
            let p = pos_of(cell);
            flows[p] = if k % 2 == 0 { flows[p].sub(theta) } else { flows[p].add(theta) };
        }
        let lp = pos_of(leave_cell);
        basis[lp] = enter;
        flows[lp] = theta;
        in_basis[leave_cell] = false;
        in_basis[enter] = true;
    }

    let mut order: Vec<usize> = (0..basis.len()).collect();
    order.sort_by_key(|&k| basis[k]);
    let basis_sorted: Vec<usize> = order.iter().map(|&k| basis[k]).collect();
    let units: Vec<i64> = order.iter().map(|&k| flows[k].units).collect();
    let scale = (n_s * n_t) as f64;
    let mut plan = vec![0.0; problem.n_cells()];
    let mut objective = 0.0;
    for (&c, &u) in basis_sorted.iter().zip(&units) {
        plan[c] = u as f64 / scale;
        objective += plan[c] * problem.cost[c];
    }
    Ok(TransportSolution {
        n_s,
        n_t,
        plan,
        basis: basis_sorted,
        objective,
        pivots,
        units,
    })
}

/// Reduced costs of every cell under the solution's basis.
pub fn reduced_costs(solution: &TransportSolution, cost: &[f64]) -> Result<Vec<f64>> {
    let (n_s, n_t) = (solution.n_s, solution.n_t);
    let pot = potentials(n_s, n_t, &solution.basis, cost)?;
    Ok((0..n_s * n_t)
        .map(|c| cost[c] - pot[c / n_t] - pot[n_s + c % n_t])
        .collect())
}
