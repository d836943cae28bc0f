//! Shared inputs for the benchmarks in `benches/`.

use deepswitch::payoff::{ProblemSpec, SwitchingProblem};
use deepswitch::sim::TimeGrid;

/// The three-regime GBM instance on a shortened grid so one iteration stays in the millisecond range.
pub fn bench_problem(d: usize, n_dates: usize, substeps: usize) -> SwitchingProblem {
    let mut spec = ProblemSpec::gbm_three_regime(d);
    spec.grid = TimeGrid::new(1.0, n_dates, substeps).expect("valid grid");
    SwitchingProblem::from_spec(spec).expect("valid problem")
}
