//! Exact optimal transport between uniform empirical measures, the induced
//! adaptation map, and the reduced-cost event system along a data line.

pub mod adapt;
pub mod events;
pub mod problem;
pub mod simplex;

pub use adapt::{adapt, AdaptationOperator};
pub use events::{ot_event_system, ot_event_system_line};
pub use problem::{build_cost, build_cost_rows, OtProblem, ParametricCost};
pub use simplex::{reduced_costs, solve_ot, solve_ot_from, TransportSolution};
