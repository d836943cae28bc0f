//! Problem instances: regimes, running/terminal payoffs, switching costs and
//! their pathwise evaluation.

mod expr;
mod problem;
mod tables;
mod triangular;

pub use expr::{EvalPoint, Expr};
pub use problem::{CostSpec, ProblemSpec, Quadrature, SwitchingProblem};
pub use tables::{evaluate_payoffs, PayoffTables};
pub use triangular::{validate_triangular, TriangularReport, TriangularStatus};
pub(crate) use triangular::TriangularScan;
