use serde::{Deserialize, Serialize};

use super::expr::{EvalPoint, Expr};
use crate::error::{Error, Result};
use crate::sim::{Dynamics, TimeGrid};

/// Switching-cost declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSpec {
    /// `l_ij = scale |i - j|^exponent + offset` for `i != j`, zero on the diagonal.
    Distance {
        scale: f64,
        #[serde(default = "one")]
        exponent: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Full matrix of cost expressions; diagonal entries must be `"0"`.
    Matrix { entries: Vec<Vec<String>> },
}

fn one() -> f64 {
    1.0
}

/// Running-integral quadrature over the subgrid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    #[default]
    LeftEndpoint,
    Trapezoid,
}

/// Serializable declaration of a switching problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(default)]
    pub name: String,
    pub grid: TimeGrid,
    pub dynamics: Dynamics,
    /// Running payoff `f^i(t, x)` per regime.
    pub running: Vec<String>,
    /// Terminal payoff `Phi^i(x)` per regime.
    pub terminal: Vec<String>,
    pub costs: CostSpec,
    /// 1-based reference regime used for dual training.
    #[serde(default = "first_regime")]
    pub reference_regime: usize,
    #[serde(default)]
    pub quadrature: Quadrature,
}

fn first_regime() -> usize {
    1
}

/// A compiled switching problem. Regimes are 0-based internally.
#[derive(Debug, Clone)]
pub struct SwitchingProblem {
    spec: ProblemSpec,
    pub grid: TimeGrid,
    pub dynamics: Dynamics,
    running: Vec<Expr>,
    terminal: Vec<Expr>,
    costs: Vec<Vec<Expr>>,
    running_const: Vec<Option<f64>>,
    costs_const: Option<Vec<Vec<f64>>>,
    pub reference_regime: usize,
    pub quadrature: Quadrature,
}

impl SwitchingProblem {
    pub fn from_spec(spec: ProblemSpec) -> Result<Self> {
        spec.grid.validate()?;
        spec.dynamics.validate()?;
        let d = spec.dynamics.dim();
        let j = spec.running.len();
        if j == 0 {
            return Err(Error::config("at least one regime is required"));
        }
        if spec.terminal.len() != j {
            return Err(Error::config(format!(
                "{} running payoffs but {} terminal payoffs",
                j,
                spec.terminal.len()
            )));
        }
        if spec.reference_regime == 0 || spec.reference_regime > j {
            return Err(Error::config(format!(
                "reference regime {} outside 1..={j}",
                spec.reference_regime
            )));
        }
        let running = spec
            .running
            .iter()
            .map(|s| Expr::parse(s, d))
            .collect::<Result<Vec<_>>>()?;
        let terminal = spec
            .terminal
            .iter()
            .map(|s| Expr::parse(s, d))
            .collect::<Result<Vec<_>>>()?;
        let costs = match &spec.costs {
            CostSpec::Distance {
                scale,
                exponent,
                offset,
            } => (0..j)
                .map(|a| {
                    (0..j)
                        .map(|b| {
                            if a == b {
                                Expr::Const(0.0)
                            } else {
                                let dist = (a as f64 - b as f64).abs();
                                Expr::Const(scale * dist.powf(*exponent) + offset)
                            }
                        })
                        .collect()
                })
                .collect::<Vec<Vec<Expr>>>(),
            CostSpec::Matrix { entries } => {
                if entries.len() != j || entries.iter().any(|r| r.len() != j) {
                    return Err(Error::config(format!("cost matrix must be {j}x{j}")));
                }
                let mut out = Vec::with_capacity(j);
                for (a, row) in entries.iter().enumerate() {
                    let mut parsed = Vec::with_capacity(j);
                    for (b, src) in row.iter().enumerate() {
                        let e = Expr::parse(src, d)?;
                        if a == b && e.as_constant() != Some(0.0) {
                            return Err(Error::config(format!(
                                "diagonal cost l_{{{0}{0}}} must be identically zero",
                                a + 1
                            )));
                        }
                        parsed.push(e);
                    }
                    out.push(parsed);
                }
                out
            }
        };
        let running_const = running.iter().map(Expr::as_constant).collect();
        let costs_const = costs
            .iter()
            .map(|row| row.iter().map(Expr::as_constant).collect::<Option<Vec<_>>>())
            .collect::<Option<Vec<_>>>();
        Ok(SwitchingProblem {
            grid: spec.grid,
            dynamics: spec.dynamics.clone(),
            reference_regime: spec.reference_regime - 1,
            quadrature: spec.quadrature,
            spec,
            running,
            terminal,
            costs,
            running_const,
            costs_const,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn n_regimes(&self) -> usize {
        self.running.len()
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn running(&self, regime: usize, t: f64, x: &[f64]) -> f64 {
        match self.running_const[regime] {
            Some(c) => c,
            None => self.running[regime].eval(&EvalPoint::new(t, x)),
        }
    }

    pub fn running_constant(&self, regime: usize) -> Option<f64> {
        self.running_const[regime]
    }

    pub fn terminal(&self, regime: usize, x: &[f64]) -> f64 {
        self.terminal[regime].eval(&EvalPoint::new(self.grid.horizon, x))
    }

    pub fn cost(&self, from: usize, to: usize, t: f64, x: &[f64]) -> f64 {
        match &self.costs_const {
            Some(c) => c[from][to],
            None => self.costs[from][to].eval(&EvalPoint::new(t, x)),
        }
    }

    pub fn constant_costs(&self) -> Option<&Vec<Vec<f64>>> {
        self.costs_const.as_ref()
    }

    /// Returns a copy with a different time grid (same payoffs and dynamics).
    pub fn with_grid(&self, grid: TimeGrid) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.grid = grid;
        Self::from_spec(spec)
    }

    /// Regime-switching problem of the continuous-observation GBM benchmark:
    /// three regimes, `T = 1`, `N = 12`, `K = 60 + d`.
    pub fn gbm_three_regime(d: usize) -> Result<Self> {
        Self::from_spec(ProblemSpec::gbm_three_regime(d))
    }

    /// Exponential OU with jumps, energy-tolling style regimes, `K = 1`.
    pub fn expou_jump(d: usize) -> Result<Self> {
        Self::from_spec(ProblemSpec::expou_jump(d)?)
    }

    pub fn builtin(name: &str, d: usize) -> Result<Self> {
        Self::from_spec(ProblemSpec::builtin(name, d)?)
    }
}

impl ProblemSpec {
    pub fn builtin(name: &str, d: usize) -> Result<Self> {
        match name {
            "gbm3regime" => Ok(Self::gbm_three_regime(d)),
            "expou_jump" => Self::expou_jump(d),
            other => Err(Error::config(format!(
                "unknown built-in problem {other:?} (known: gbm3regime, expou_jump)"
            ))),
        }
    }

    pub fn gbm_three_regime(d: usize) -> Self {
        let vol = (1..=d)
            .map(|k| if 2 * k <= d { 0.2 } else { 0.3 })
            .collect();
        ProblemSpec {
            name: "gbm3regime".into(),
            grid: TimeGrid {
                horizon: 1.0,
                n_dates: 12,
                substeps: 60 + d,
            },
            dynamics: Dynamics::Gbm {
                drift: vec![-0.05; d],
                vol,
                x0: vec![50.0; d],
            },
            running: vec![
                "-0.5".into(),
                "2 * mean(x) - 100".into(),
                "2 * (x1 - 1.1 * xd) - 1".into(),
            ],
            terminal: vec!["0".into(); 3],
            costs: CostSpec::Distance {
                scale: 0.2,
                exponent: 1.0,
                offset: 0.0,
            },
            reference_regime: 1,
            quadrature: Quadrature::LeftEndpoint,
        }
    }

    /// Power price in coordinate 1, fuel prices in coordinates `2..=d`.
    /// Regime 1 idles at unit cost, regimes 2 and 3 run at half and full
    /// capacity on the spark spread. Switching costs scale with the fuel level
    /// and satisfy `l_1j <= 0.01 mean(x, 2, d) + 0.001`.
    pub fn expou_jump(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::config("expou_jump needs d >= 2 (power plus fuel)"));
        }
        let mut kappa = vec![2.0; d];
        let mut mean = vec![6f64.ln(); d];
        let mut vol = vec![0.4; d];
        let mut jump_intensity = vec![4.0; d];
        let mut jump_mean = vec![0.05; d];
        let mut jump_std = vec![0.05; d];
        kappa[0] = 5.0;
        mean[0] = 50f64.ln();
        vol[0] = 0.6;
        jump_intensity[0] = 12.0;
        jump_mean[0] = 0.2;
        jump_std[0] = 0.1;
        let mut x0 = vec![6.0; d];
        x0[0] = 50.0;
        let spread = "(x1 - 7.5 * mean(x, 2, d))";
        let level = "(0.01 * mean(x, 2, d) + 0.001)";
        let entries = (0..3)
            .map(|a: usize| {
                (0..3)
                    .map(|b: usize| {
                        if a == b {
                            "0".to_string()
                        } else {
                            let w = ((a.abs_diff(b)) as f64 / 2.0).sqrt();
                            format!("{w} * {level}")
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(ProblemSpec {
            name: "expou_jump".into(),
            grid: TimeGrid {
                horizon: 60.0 / 720.0,
                n_dates: 60,
                substeps: 1,
            },
            dynamics: Dynamics::ExpOuJump {
                kappa,
                mean,
                vol,
                jump_intensity,
                jump_mean,
                jump_std,
                x0,
            },
            running: vec![
                "-1".into(),
                format!("0.5 * {spread} - 1"),
                format!("{spread} - 1.5"),
            ],
            terminal: vec!["0".into(); 3],
            costs: CostSpec::Matrix { entries },
            reference_regime: 1,
            quadrature: Quadrature::LeftEndpoint,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gbm_benchmark_payoffs() {
        let p = SwitchingProblem::gbm_three_regime(2).unwrap();
        assert_eq!(p.n_regimes(), 3);
        assert_eq!(p.grid.substeps, 62);
        let x = [50.0, 50.0];
        assert_eq!(p.running(0, 0.3, &x), -0.5);
        assert!((p.running(1, 0.0, &x) - 0.0).abs() < 1e-12);
        assert!((p.running(2, 0.0, &x) - (2.0 * (50.0 - 55.0) - 1.0)).abs() < 1e-12);
        assert!((p.cost(0, 2, 0.0, &x) - 0.4).abs() < 1e-15);
        assert_eq!(p.cost(1, 1, 0.0, &x), 0.0);
        match &p.dynamics {
            Dynamics::Gbm { vol, .. } => assert_eq!(vol, &vec![0.2, 0.3]),
            _ => unreachable!(),
        }
        let p10 = ProblemSpec::gbm_three_regime(10);
        match &p10.dynamics {
            Dynamics::Gbm { vol, .. } => {
                assert_eq!(vol[4], 0.2);
                assert_eq!(vol[5], 0.3);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn expou_cost_bound_for_reference_regime() {
        let p = SwitchingProblem::expou_jump(3).unwrap();
        let x = [55.0, 5.0, 7.0];
        let bound = 0.01 * 6.0 + 0.001;
        for j in 0..3 {
            assert!(p.cost(0, j, 0.0, &x) <= bound + 1e-15);
        }
        assert!(SwitchingProblem::expou_jump(1).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = ProblemSpec::gbm_three_regime(2);
        spec.terminal.pop();
        assert!(SwitchingProblem::from_spec(spec).is_err());
        let mut spec = ProblemSpec::gbm_three_regime(2);
        spec.reference_regime = 4;
        assert!(SwitchingProblem::from_spec(spec).is_err());
        let mut spec = ProblemSpec::gbm_three_regime(2);
        spec.costs = CostSpec::Matrix {
            entries: vec![
                vec!["0".into(), "1".into(), "1".into()],
                vec!["1".into(), "0.1".into(), "1".into()],
                vec!["1".into(), "1".into(), "0".into()],
            ],
        };
        assert!(SwitchingProblem::from_spec(spec).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ProblemSpec::expou_jump(2).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: ProblemSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
