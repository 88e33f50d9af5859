use super::problem::ParametricCost;
use super::simplex::{potentials, TransportSolution};
use crate::error::{Error, Result};
use crate::events::EventSystem;

/// Reduced costs of the nonbasic cells as quadratics in `z`; the basis of
/// `solution` stays optimal exactly where every row is nonnegative. Rows are
/// labelled by cell index.
pub fn ot_event_system(solution: &TransportSolution, cost: &ParametricCost) -> Result<EventSystem> {
    let (n_s, n_t) = (solution.n_s, solution.n_t);
    if cost.n_s != n_s || cost.n_t != n_t {
        return Err(Error::Dimension("parametric cost does not match the solution".into()));
    }
    // reduced costs are linear in the cost vector, so each part gets its own duals
    let pw = potentials(n_s, n_t, &solution.basis, &cost.w)?;
    let pr = potentials(n_s, n_t, &solution.basis, &cost.r)?;
    let po = potentials(n_s, n_t, &solution.basis, &cost.o)?;
    let cells = n_s * n_t;
    let mut basic = vec![false; cells];
    for &c in &solution.basis {
        basic[c] = true;
    }
    let mut out = EventSystem::with_capacity(cells + 1 - n_s - n_t);
    for c in 0..cells {
        if basic[c] {
            continue;
        }
        let (i, t) = (c / n_t, n_s + c % n_t);
        out.push_quadratic(
            cost.w[c] - pw[i] - pw[t],
            cost.r[c] - pr[i] - pr[t],
            cost.o[c] - po[i] - po[t],
            c,
        );
    }
    Ok(out)
}

/// Convenience form taking the line directly.
pub fn ot_event_system_line(
    solution: &TransportSolution,
    a: &[f64],
    b: &[f64],
    dim: usize,
) -> Result<EventSystem> {
    let pc = ParametricCost::new(solution.n_s, solution.n_t, dim, a, b)?;
    ot_event_system(solution, &pc)
}
