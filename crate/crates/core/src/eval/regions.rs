use std::io::Write;

use ndarray::{Array2, Axis};
use serde::Serialize;

use super::bounds::{csv_err, EvalOptions};
use crate::dual::{all_increments, dual_backward, DualPenalty};
use crate::error::{Error, Result};
use crate::payoff::{evaluate_payoffs, SwitchingProblem};
use crate::primal::SwitchRule;
use crate::rng::derive_seed;
use crate::sim::{simulate, simulate_conditional};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionRow {
    pub state: Vec<f64>,
    /// 1-based regimes from here on.
    pub current: usize,
    pub dual: usize,
    pub primal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionExport {
    pub date: usize,
    pub rows: Vec<RegionRow>,
}

impl RegionExport {
    /// Share of rows where the two rules agree.
    pub fn agreement(&self) -> f64 {
        let same = self.rows.iter().filter(|r| r.dual == r.primal).count();
        same as f64 / self.rows.len().max(1) as f64
    }
}

/// Preferred regimes at date `n` on `n_states` simulated states, for every
/// current regime. The dual choice is the stage argmax of the penalized
/// recursion on `conditional_paths` fresh continuations from each state
/// (averaged when more than one); the primal choice is the hard policy.
pub fn export_regions(
    problem: &SwitchingProblem,
    penalty: &DualPenalty,
    policy: &dyn SwitchRule,
    n: usize,
    n_states: usize,
    conditional_paths: usize,
    options: &EvalOptions,
) -> Result<RegionExport> {
    let (j, d) = (problem.n_regimes(), problem.dim());
    if n >= problem.grid.n_dates {
        return Err(Error::config(format!("date {n} has no decision (N = {})", problem.grid.n_dates)));
    }
    if n_states == 0 || conditional_paths == 0 {
        return Err(Error::config("need at least one state and one conditional path"));
    }
    let penalty = penalty.folded();
    let m = conditional_paths;
    let t = problem.grid.date_time(n);
    let state_seed = derive_seed(options.seed, "region-states", n as u64);
    let cond_seed = derive_seed(options.seed, "region-continuation", n as u64);
    let mut rows = Vec::with_capacity(n_states * j);
    let per_chunk = (options.chunk.max(m) / m).max(1);
    let mut done = 0;
    while done < n_states {
        let size = per_chunk.min(n_states - done);
        let start = simulate(&problem.dynamics, &problem.grid, size, state_seed, &options.sim(done))?;
        let states = start.date_states(n).to_owned();
        let repeated = Array2::from_shape_fn((size * m, d), |(r, c)| states[[r / m, c]]);
        let cont = simulate_conditional(
            &problem.dynamics,
            &problem.grid,
            n,
            repeated.view(),
            size * m,
            cond_seed,
            &options.sim(done * m),
        )?;
        let tables = evaluate_payoffs(problem, &cont)?;
        let xi = all_increments(&penalty, &cont)?;
        let v = dual_backward(&tables, &xi)?;
        for i in 0..j {
            let current = vec![i; size];
            let primal = policy.decide(n, t, states.view(), &current)?;
            for s in 0..size {
                let dual = if m == 1 {
                    v.argmax[[s, 0, i]]
                } else {
                    // argmax of the averaged stage objective, ties to the smallest index
                    let mut best = (0, f64::NEG_INFINITY);
                    for r in 0..j {
                        let mean = (s * m..(s + 1) * m)
                            .map(|q| {
                                tables.running[[q, 0, r]] - tables.costs[[q, 0, i, r]] - xi[[q, 0, r]]
                                    + v.upper[[q, 1, r]]
                            })
                            .sum::<f64>()
                            / m as f64;
                        if mean > best.1 {
                            best = (r, mean);
                        }
                    }
                    best.0
                };
                rows.push(RegionRow {
                    state: states.index_axis(Axis(0), s).to_vec(),
                    current: i + 1,
                    dual: dual + 1,
                    primal: primal[s] + 1,
                });
            }
        }
        done += size;
    }
    Ok(RegionExport { date: n, rows })
}

/// Regions CSV: `x1..xd, current, dual, primal`.
pub fn write_regions_csv<W: Write>(export: &RegionExport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = export.rows.first().map_or(0, |r| r.state.len());
    let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    header.extend(["current".into(), "dual".into(), "primal".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for r in &export.rows {
        let mut rec: Vec<String> = r.state.iter().map(|x| x.to_string()).collect();
        rec.extend([r.current.to_string(), r.dual.to_string(), r.primal.to_string()]);
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoff::{CostSpec, ProblemSpec};
    use crate::primal::StayRule;
    use crate::sim::TimeGrid;

    fn problem(spec_edit: impl FnOnce(&mut ProblemSpec)) -> SwitchingProblem {
        let mut spec = ProblemSpec::gbm_three_regime(2);
        spec.grid = TimeGrid::new(1.0, 4, 5).unwrap();
        spec_edit(&mut spec);
        SwitchingProblem::from_spec(spec).unwrap()
    }

    #[test]
    fn single_regime_always_chooses_one() {
        let p = problem(|s| {
            s.running = vec!["mean(x)".into()];
            s.terminal = vec!["0".into()];
        });
        let e = export_regions(&p, &DualPenalty::zero(&p), &StayRule { n_regimes: 1 }, 2, 40, 1, &EvalOptions::new(0, 1))
            .unwrap();
        assert_eq!(e.rows.len(), 40);
        assert!(e.rows.iter().all(|r| r.dual == 1 && r.primal == 1 && r.current == 1));
    }

    #[test]
    fn prohibitive_costs_keep_the_current_regime() {
        let p = problem(|s| {
            s.costs = CostSpec::Distance {
                scale: 0.0,
                exponent: 1.0,
                offset: 1e6,
            }
        });
        for m in [1, 3] {
            let e = export_regions(&p, &DualPenalty::zero(&p), &StayRule { n_regimes: 3 }, 1, 25, m, &EvalOptions::new(0, 2))
                .unwrap();
            assert_eq!(e.rows.len(), 75);
            assert!(e.rows.iter().all(|r| r.dual == r.current && r.primal == r.current));
            assert_eq!(e.agreement(), 1.0);
        }
    }

    #[test]
    fn csv_layout() {
        let p = problem(|_| {});
        let e = export_regions(&p, &DualPenalty::zero(&p), &StayRule { n_regimes: 3 }, 0, 3, 1, &EvalOptions::new(0, 2)).unwrap();
        let mut buf = Vec::new();
        write_regions_csv(&e, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "x1,x2,current,dual,primal");
        assert_eq!(text.lines().count(), 10);
    }
}
