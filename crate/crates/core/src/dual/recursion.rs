use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::payoff::PayoffTables;

/// Pathwise dual values and the maximising regimes of each step.
#[derive(Debug, Clone, PartialEq)]
pub struct DualValues {
    pub first_date: usize,
    /// `[path, stage, i]` for stages `0..=S`; stage `S` holds the terminal payoffs.
    pub upper: Array3<f64>,
    /// `[path, stage, i]` maximising `j` (smallest on ties), stages `0..S`.
    pub argmax: Array3<usize>,
}

impl DualValues {
    pub fn n_paths(&self) -> usize {
        self.upper.len_of(Axis(0))
    }

    pub fn n_stages(&self) -> usize {
        self.argmax.len_of(Axis(1))
    }

    /// Values at stage `s`, `[path, i]`.
    pub fn stage(&self, s: usize) -> ArrayView2<'_, f64> {
        self.upper.index_axis(Axis(1), s)
    }
}

/// One step of the dual recursion at stage `s`:
/// `U_s^i = max_j [F_s^j - l_ij - xi_s^j + U_{s+1}^j]`.
pub fn dual_step(
    payoffs: &PayoffTables,
    s: usize,
    xi: ArrayView2<'_, f64>,
    next: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, Array2<usize>)> {
    let n_paths = payoffs.n_paths();
    let j = payoffs.n_regimes();
    if xi.dim() != (n_paths, j) || next.dim() != (n_paths, j) {
        return Err(Error::shape(format!(
            "stage {s}: increments {:?} and continuation {:?}, expected {:?}",
            xi.dim(),
            next.dim(),
            (n_paths, j)
        )));
    }
    let mut values = Array2::zeros((n_paths, j));
    let mut argmax = Array2::zeros((n_paths, j));
    let mut gain = vec![0.0; j];
    for p in 0..n_paths {
        for (b, g) in gain.iter_mut().enumerate() {
            *g = payoffs.running[[p, s, b]] - xi[[p, b]] + next[[p, b]];
        }
        for a in 0..j {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (b, &g) in gain.iter().enumerate() {
                let v = g - payoffs.costs[[p, s, a, b]];
                if v > best {
                    best = v;
                    arg = b;
                }
            }
            if !best.is_finite() {
                return Err(Error::NonFinite {
                    what: "dual value",
                    path: p,
                    step: payoffs.first_date + s,
                });
            }
            values[[p, a]] = best;
            argmax[[p, a]] = arg;
        }
    }
    Ok((values, argmax))
}

/// Full backward recursion from the terminal payoffs; `increments` is
/// `[path, stage, j]`.
pub fn dual_backward(payoffs: &PayoffTables, increments: &Array3<f64>) -> Result<DualValues> {
    let n_paths = payoffs.n_paths();
    let stages = payoffs.n_stages();
    let j = payoffs.n_regimes();
    if increments.dim() != (n_paths, stages, j) {
        return Err(Error::shape(format!(
            "increments {:?}, expected {:?}",
            increments.dim(),
            (n_paths, stages, j)
        )));
    }
    let mut upper = Array3::zeros((n_paths, stages + 1, j));
    let mut argmax = Array3::zeros((n_paths, stages, j));
    upper.index_axis_mut(Axis(1), stages).assign(&payoffs.terminal);
    for s in (0..stages).rev() {
        let (v, a) = dual_step(
            payoffs,
            s,
            increments.index_axis(Axis(1), s),
            upper.index_axis(Axis(1), s + 1),
        )?;
        upper.index_axis_mut(Axis(1), s).assign(&v);
        argmax.index_axis_mut(Axis(1), s).assign(&a);
    }
    Ok(DualValues {
        first_date: payoffs.first_date,
        upper,
        argmax,
    })
}

/// Loss (D1): batch mean of `U_s^{i0}`.
pub fn loss_upper(values: ArrayView2<'_, f64>, i0: usize) -> f64 {
    values.column(i0).mean().unwrap_or(f64::NAN)
}

/// Loss (D2): batch mean of `|U_s^{i0} - eta|^2`.
pub fn loss_l2(values: ArrayView2<'_, f64>, i0: usize, eta: ArrayView1<'_, f64>) -> f64 {
    let u = values.column(i0);
    u.iter()
        .zip(eta.iter())
        .map(|(u, e)| (u - e) * (u - e))
        .sum::<f64>()
        / u.len() as f64
}
