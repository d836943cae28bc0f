use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::dual::DualPenalty;
use crate::error::{Error, Result};
use crate::neural::time_state_input;
use crate::payoff::SwitchingProblem;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRatios {
    /// `[state, d]`; rows whose solve failed are NaN.
    pub values: Array2<f64>,
    /// `(row, reason)` for every failed solve.
    pub failures: Vec<(usize, String)>,
}

/// Hedge ratios `Pi` with `sigma(t, x)^T Pi = z_n^i(t, x)` per state, by LU solve.
pub fn delta_ratio(
    problem: &SwitchingProblem,
    penalty: &DualPenalty,
    n: usize,
    regime: usize,
    t: f64,
    states: ArrayView2<'_, f64>,
) -> Result<DeltaRatios> {
    let d = problem.dim();
    if n >= penalty.nets.len() || regime >= penalty.n_regimes {
        return Err(Error::config(format!("no integrand for date {n}, regime {}", regime + 1)));
    }
    if states.ncols() != d {
        return Err(Error::shape(format!("states have {} columns, expected {d}", states.ncols())));
    }
    let z = penalty.nets[n][regime].eval(time_state_input(&vec![t; states.nrows()], states).view())?;
    let mut values = Array2::from_elem(states.dim(), f64::NAN);
    let mut failures = Vec::new();
    for (row, x) in states.rows().into_iter().enumerate() {
        let sigma = problem.dynamics.sigma(t, x.as_slice().unwrap_or(&x.to_vec()));
        let a = DMatrix::from_fn(d, d, |r, c| sigma[[c, r]]);
        let rhs = DVector::from_iterator(d, z.row(row).iter().copied());
        match a.lu().solve(&rhs) {
            Some(pi) if pi.iter().all(|v| v.is_finite()) => {
                values.row_mut(row).iter_mut().zip(pi.iter()).for_each(|(o, &v)| *o = v);
            }
            _ => failures.push((row, format!("singular diffusion matrix at state {:?}", x.to_vec()))),
        }
    }
    Ok(DeltaRatios { values, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::PenaltyArch;
    use crate::neural::{Activation, Layer, Network};
    use crate::sim::{Dynamics, TimeGrid};
    use ndarray::{array, Array1};

    fn gbm(vol: Vec<f64>) -> SwitchingProblem {
        let mut p = SwitchingProblem::gbm_three_regime(2).unwrap();
        p = p.with_grid(TimeGrid::new(1.0, 2, 2).unwrap()).unwrap();
        if let Dynamics::Gbm { vol: v, .. } = &mut p.dynamics {
            *v = vol;
        }
        p
    }

    /// `z(t, x) = x W` for a fixed `W`.
    fn linear_penalty(p: &SwitchingProblem, w: Array2<f64>) -> DualPenalty {
        let mut pen = DualPenalty::zero(p);
        let mut weight = Array2::zeros((3, 2));
        weight.slice_mut(ndarray::s![1.., ..]).assign(&w);
        pen.nets[0][0] = Network {
            input_norm: None,
            layers: vec![Layer {
                weight,
                bias: Array1::zeros(2),
                norm: None,
                activation: Activation::Identity,
            }],
        };
        pen
    }

    #[test]
    fn gbm_ratio_is_componentwise_division() {
        let p = gbm(vec![0.2, 0.3]);
        let pen = linear_penalty(&p, array![[1.0, 0.5], [-2.0, 0.25]]);
        let xs = array![[1.0, 2.0], [0.5, 3.0], [4.0, 0.1]];
        let r = delta_ratio(&p, &pen, 0, 0, 0.25, xs.view()).unwrap();
        assert!(r.failures.is_empty());
        for (k, x) in xs.rows().into_iter().enumerate() {
            let z = [x[0] - 2.0 * x[1], 0.5 * x[0] + 0.25 * x[1]];
            for (c, vol) in [0.2, 0.3].into_iter().enumerate() {
                assert!((r.values[[k, c]] - z[c] / (vol * x[c])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_state_is_reported_per_row() {
        let p = gbm(vec![0.2, 0.3]);
        let pen = DualPenalty::new(&p, &PenaltyArch::for_problem(&p), 1).unwrap();
        let xs = array![[1.0, 1.0], [0.0, 1.0]];
        let r = delta_ratio(&p, &pen, 1, 2, 0.5, xs.view()).unwrap();
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].0, 1);
        assert!(r.values[[1, 0]].is_nan() && r.values[[0, 0]].is_finite());
    }
}
