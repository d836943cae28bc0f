use ndarray::{Array2, Array3, Array4, Axis};
use rayon::prelude::*;

use super::problem::{Quadrature, SwitchingProblem};
use crate::error::{Error, Result};
use crate::sim::PathBatch;

/// Pathwise payoff ingredients for stages `first_date..N`.
///
/// Stage `s` covers the interval `[t_{first_date + s}, t_{first_date + s + 1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffTables {
    pub first_date: usize,
    /// Running integrals `[path, stage, regime]`.
    pub running: Array3<f64>,
    /// Switching costs at the stage's opening date `[path, stage, from, to]`.
    pub costs: Array4<f64>,
    /// Terminal payoffs `[path, regime]`.
    pub terminal: Array2<f64>,
}

impl PayoffTables {
    pub fn n_paths(&self) -> usize {
        self.terminal.nrows()
    }

    pub fn n_stages(&self) -> usize {
        self.running.len_of(Axis(1))
    }

    pub fn n_regimes(&self) -> usize {
        self.terminal.ncols()
    }

    /// Tables for paths `idx` only (in that order).
    pub fn select_paths(&self, idx: &[usize]) -> PayoffTables {
        PayoffTables {
            first_date: self.first_date,
            running: self.running.select(Axis(0), idx),
            costs: self.costs.select(Axis(0), idx),
            terminal: self.terminal.select(Axis(0), idx),
        }
    }
}

/// Evaluates running integrals, costs and terminal payoffs on `paths`.
pub fn evaluate_payoffs(problem: &SwitchingProblem, paths: &PathBatch) -> Result<PayoffTables> {
    if paths.grid != problem.grid {
        return Err(Error::config("path grid differs from the problem grid"));
    }
    if paths.dim() != problem.dim() {
        return Err(Error::shape(format!(
            "paths have dimension {}, problem expects {}",
            paths.dim(),
            problem.dim()
        )));
    }
    let grid = problem.grid;
    let n_paths = paths.n_paths();
    let stages = grid.n_dates - paths.first_date;
    let j = problem.n_regimes();
    let k_sub = grid.substeps;
    let dt = grid.dt();

    let per_path: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let xs = paths.states.index_axis(Axis(0), p);
            let mut run = vec![0.0; stages * j];
            let mut cst = vec![0.0; stages * j * j];
            let mut term = vec![0.0; j];
            let mut x = vec![0.0; xs.ncols()];
            let load = |step: usize, x: &mut Vec<f64>| {
                x.iter_mut()
                    .zip(xs.row(step).iter())
                    .for_each(|(o, &v)| *o = v);
            };
            for s in 0..stages {
                let n = paths.first_date + s;
                for r in 0..j {
                    let integral = if let Some(c) = problem.running_constant(r) {
                        c * dt * k_sub as f64
                    } else {
                        let mut acc = 0.0;
                        for k in 0..k_sub {
                            let step = s * k_sub + k;
                            load(step, &mut x);
                            let f = problem.running(r, grid.sub_time(n, k), &x);
                            match problem.quadrature {
                                Quadrature::LeftEndpoint => acc += f,
                                Quadrature::Trapezoid => {
                                    load(step + 1, &mut x);
                                    let g = problem.running(r, grid.sub_time(n, k + 1), &x);
                                    acc += 0.5 * (f + g);
                                }
                            }
                        }
                        acc * dt
                    };
                    if !integral.is_finite() {
                        return Err(Error::NonFinite {
                            what: "running payoff",
                            path: p,
                            step: s * k_sub,
                        });
                    }
                    run[s * j + r] = integral;
                }
                load(s * k_sub, &mut x);
                let t = grid.date_time(n);
                for a in 0..j {
                    for b in 0..j {
                        let c = if a == b { 0.0 } else { problem.cost(a, b, t, &x) };
                        if !c.is_finite() {
                            return Err(Error::NonFinite {
                                what: "switching cost",
                                path: p,
                                step: s * k_sub,
                            });
                        }
                        cst[(s * j + a) * j + b] = c;
                    }
                }
            }
            load(stages * k_sub, &mut x);
            for r in 0..j {
                let g = problem.terminal(r, &x);
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        what: "terminal payoff",
                        path: p,
                        step: stages * k_sub,
                    });
                }
                term[r] = g;
            }
            Ok((run, cst, term))
        })
        .collect();

    let mut running = Vec::with_capacity(n_paths * stages * j);
    let mut costs = Vec::with_capacity(n_paths * stages * j * j);
    let mut terminal = Vec::with_capacity(n_paths * j);
    for item in per_path {
        let (r, c, t) = item?;
        running.extend(r);
        costs.extend(c);
        terminal.extend(t);
    }
    let running = Array3::from_shape_vec((n_paths, stages, j), running).expect("shape");
    let costs = Array4::from_shape_vec((n_paths, stages, j, j), costs).expect("shape");
    let terminal = Array2::from_shape_vec((n_paths, j), terminal).expect("shape");

    Ok(PayoffTables {
        first_date: paths.first_date,
        running,
        costs,
        terminal,
    })
}
