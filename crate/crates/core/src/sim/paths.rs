use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use super::{Dynamics, TimeGrid};
use crate::error::{Error, Result};
use crate::rng::path_rng;

/// Simulation knobs that are not part of the model itself.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Upper bound on the bytes a single batch may allocate.
    pub memory_budget: usize,
    /// Index of the first path inside the seed's stream family. Chunked
    /// evaluation uses consecutive offsets so chunks reproduce one large batch.
    pub path_offset: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            memory_budget: 2 << 30,
            path_offset: 0,
        }
    }
}

/// Simulated paths on the subgrid, dense `[path, step, dim]`.
///
/// Step `s` of the batch sits at global subgrid index `first_date * K + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub grid: TimeGrid,
    pub first_date: usize,
    pub seed: u64,
    pub path_offset: u64,
    /// `(first_date..=N)` states, `(N - first_date) K + 1` steps.
    pub states: Array3<f64>,
    /// Brownian increments, `(N - first_date) K` steps.
    pub dw: Array3<f64>,
    /// Poisson counts per substep, present for jump models only.
    pub dn: Option<Array3<f64>>,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.states.len_of(Axis(0))
    }

    pub fn dim(&self) -> usize {
        self.states.len_of(Axis(2))
    }

    pub fn n_steps(&self) -> usize {
        self.dw.len_of(Axis(1))
    }

    /// Local step index of substep `k` in interval `n`.
    pub fn local_step(&self, n: usize, k: usize) -> usize {
        debug_assert!(n >= self.first_date);
        (n - self.first_date) * self.grid.substeps + k
    }

    /// States at intervention date `n`, `[path, dim]`.
    pub fn date_states(&self, n: usize) -> ArrayView2<'_, f64> {
        self.states.index_axis(Axis(1), self.local_step(n, 0))
    }

    /// Sum of the Brownian increments over interval `n`, `[path, dim]`.
    pub fn interval_dw(&self, n: usize) -> Array2<f64> {
        let from = self.local_step(n, 0);
        let to = from + self.grid.substeps;
        self.dw.slice(s![.., from..to, ..]).sum_axis(Axis(1))
    }
}

fn batch_bytes(n_paths: usize, steps: usize, dim: usize, jumps: bool) -> usize {
    let per_path = (steps + 1) + steps * if jumps { 2 } else { 1 };
    n_paths
        .saturating_mul(per_path)
        .saturating_mul(dim)
        .saturating_mul(std::mem::size_of::<f64>())
}

/// Simulates `n_paths` paths from `x0` at `t = 0`.
pub fn simulate(
    dynamics: &Dynamics,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    options: &SimOptions,
) -> Result<PathBatch> {
    let d = dynamics.dim();
    let x0 = Array2::from_shape_fn((n_paths, d), |(_, k)| dynamics.x0()[k]);
    simulate_conditional(dynamics, grid, 0, x0.view(), n_paths, seed, options)
}

/// Simulates paths that start from `start_states` at intervention date
/// `start_index`. Path `p` consumes the random stream `(seed, path_offset + p)`
/// from its beginning, so starting every path at `x0` on date 0 reproduces
/// [`simulate`] bit for bit.
pub fn simulate_conditional(
    dynamics: &Dynamics,
    grid: &TimeGrid,
    start_index: usize,
    start_states: ArrayView2<'_, f64>,
    n_paths: usize,
    seed: u64,
    options: &SimOptions,
) -> Result<PathBatch> {
    dynamics.validate()?;
    grid.validate()?;
    let d = dynamics.dim();
    if n_paths == 0 {
        return Err(Error::config("n_paths must be at least 1"));
    }
    if start_index > grid.n_dates {
        return Err(Error::config(format!(
            "start index {start_index} outside 0..={}",
            grid.n_dates
        )));
    }
    if start_states.nrows() != n_paths || start_states.ncols() != d {
        return Err(Error::shape(format!(
            "start states are {}x{}, expected {n_paths}x{d}",
            start_states.nrows(),
            start_states.ncols()
        )));
    }
    let steps = (grid.n_dates - start_index) * grid.substeps;
    let jumps = dynamics.has_jumps();
    let requested = batch_bytes(n_paths, steps, d, jumps);
    if requested > options.memory_budget {
        return Err(Error::MemoryBudget {
            requested,
            budget: options.memory_budget,
        });
    }

    let dt = grid.dt();
    let mut states = Array3::<f64>::zeros((n_paths, steps + 1, d));
    let mut dw = Array3::<f64>::zeros((n_paths, steps, d));
    let mut dn = jumps.then(|| Array3::<f64>::zeros((n_paths, steps, d)));
    states
        .slice_mut(s![.., 0, ..])
        .assign(&start_states);

    let offset = options.path_offset;
    let run_path = |p: usize,
                    mut xs: ndarray::ArrayViewMut2<'_, f64>,
                    mut ws: ndarray::ArrayViewMut2<'_, f64>,
                    mut ns: Option<ndarray::ArrayViewMut2<'_, f64>>| {
        let mut rng = path_rng(seed, offset + p as u64);
        let mut cur = vec![0.0; d];
        let mut next = vec![0.0; d];
        let mut w = vec![0.0; d];
        let mut n = vec![0.0; d];
        cur.iter_mut()
            .zip(xs.row(0).iter())
            .for_each(|(c, &x)| *c = x);
        for step in 0..steps {
            dynamics.advance(
                &cur,
                dt,
                &mut rng,
                &mut w,
                jumps.then_some(n.as_mut_slice()),
                &mut next,
            );
            xs.row_mut(step + 1)
                .iter_mut()
                .zip(&next)
                .for_each(|(o, &v)| *o = v);
            ws.row_mut(step).iter_mut().zip(&w).for_each(|(o, &v)| *o = v);
            if let Some(ns) = ns.as_mut() {
                ns.row_mut(step).iter_mut().zip(&n).for_each(|(o, &v)| *o = v);
            }
            std::mem::swap(&mut cur, &mut next);
        }
    };

    match dn.as_mut() {
        Some(dn) => {
            states
                .axis_iter_mut(Axis(0))
                .into_par_iter()
                .zip(dw.axis_iter_mut(Axis(0)))
                .zip(dn.axis_iter_mut(Axis(0)))
                .enumerate()
                .for_each(|(p, ((xs, ws), ns))| run_path(p, xs, ws, Some(ns)));
        }
        None => {
            states
                .axis_iter_mut(Axis(0))
                .into_par_iter()
                .zip(dw.axis_iter_mut(Axis(0)))
                .enumerate()
                .for_each(|(p, (xs, ws))| run_path(p, xs, ws, None));
        }
    }

    if let Some((p, step)) = first_non_finite(&states) {
        return Err(Error::NonFinite {
            what: "simulated state",
            path: p,
            step,
        });
    }

    Ok(PathBatch {
        grid: *grid,
        first_date: start_index,
        seed,
        path_offset: offset,
        states,
        dw,
        dn,
    })
}

fn first_non_finite(states: &Array3<f64>) -> Option<(usize, usize)> {
    for (p, path) in states.axis_iter(Axis(0)).enumerate() {
        for (s, row) in path.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Some((p, s));
            }
        }
    }
    None
}
