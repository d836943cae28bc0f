use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::payoff::{EvalPoint, Expr};

/// Control variate `eta_n` subtracted inside the L2 dual loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Baseline {
    Zero,
    /// `eta_n = rate (n - N)`.
    LinearInN { rate: f64 },
    /// `eta_n = (n - N) (scale * growth * max(mean(x, 2, d), floor) + offset)`:
    /// a per-period cost level from a conditional moment bound on the fuel mean.
    ExpOuMoment {
        scale: f64,
        growth: f64,
        floor: f64,
        offset: f64,
    },
    /// Expression in `t`, `n`, `N`, `d` and the state.
    Custom { expr: String },
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline::Zero
    }
}

impl Baseline {
    pub fn linear(rate: f64) -> Self {
        Baseline::LinearInN { rate }
    }

    /// Moment baseline matched to the `expou_jump` built-in.
    pub fn expou_default() -> Self {
        Baseline::ExpOuMoment {
            scale: 0.01,
            growth: 0.02f64.exp(),
            floor: 6.0,
            offset: 0.001 + 1.0 / 720.0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if let Baseline::Custom { expr } = self {
            Expr::parse(expr, dim)?;
        }
        Ok(())
    }

    /// Pathwise `eta_n` at date `n` (of `n_dates`), time `t`, states `[path, d]`.
    pub fn eval(&self, n: usize, n_dates: usize, t: f64, states: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let lag = n as f64 - n_dates as f64;
        let rows = states.nrows();
        Ok(match self {
            Baseline::Zero => Array1::zeros(rows),
            Baseline::LinearInN { rate } => Array1::from_elem(rows, rate * lag),
            Baseline::ExpOuMoment {
                scale,
                growth,
                floor,
                offset,
            } => states
                .rows()
                .into_iter()
                .map(|x| {
                    let fuel = if x.len() > 1 {
                        x.iter().skip(1).sum::<f64>() / (x.len() - 1) as f64
                    } else {
                        x[0]
                    };
                    lag * (scale * growth * fuel.max(*floor) + offset)
                })
                .collect(),
            Baseline::Custom { expr } => {
                let e = Expr::parse(expr, states.ncols())?;
                states
                    .rows()
                    .into_iter()
                    .map(|x| {
                        let x = x.to_vec();
                        let mut p = EvalPoint::new(t, &x);
                        p.date = n as f64;
                        p.dates = n_dates as f64;
                        e.eval(&p)
                    })
                    .collect()
            }
        })
    }
}
