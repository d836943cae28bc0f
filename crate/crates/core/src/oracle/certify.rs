use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::exact::{doob_martingale, exact_value, ExactSolution};
use super::lattice::LatticeModel;
use crate::dual::{dual_backward, DualValues};
use crate::error::{Error, Result};
use crate::payoff::{PayoffTables, TriangularReport, TriangularScan};
use crate::primal::SwitchRule;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifyConfig {
    /// Random centered penalties for the weak-duality check.
    pub random_penalties: usize,
    /// Random penalty pairs for the error-propagation check.
    pub penalty_pairs: usize,
    pub tolerance: f64,
    /// Standard deviation of the raw random increments before centering.
    pub penalty_scale: f64,
    pub seed: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            random_penalties: 100,
            penalty_pairs: 100,
            tolerance: 1e-10,
            penalty_scale: 1.0,
            seed: 0,
        }
    }
}

/// Where a check was worst: depth, node index and 1-based regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NodeRef {
    pub level: usize,
    pub node: usize,
    pub regime: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Largest violation magnitude seen (0 when nothing was violated).
    pub max_violation: f64,
    pub worst: Option<NodeRef>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certification {
    pub precondition: TriangularReport,
    /// Set when the triangular precondition fails; no checks are run then.
    pub skipped: Option<String>,
    pub checks: Vec<CheckOutcome>,
}

impl Certification {
    pub fn passed(&self) -> bool {
        self.skipped.is_none() && self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// First failing check, named with its worst node.
    pub fn failure(&self) -> Option<String> {
        if let Some(why) = &self.skipped {
            return Some(format!("skipped: {why}"));
        }
        self.checks.iter().find(|c| !c.passed).map(|c| match c.worst {
            Some(w) => format!(
                "{} violated by {:e} at depth {}, node {}, regime {}",
                c.name, c.max_violation, w.level, w.node, w.regime
            ),
            None => format!("{} violated by {:e}", c.name, c.max_violation),
        })
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub solution: ExactSolution,
    /// Doob increments per depth, `[b^{n+1}, J]`.
    pub doob: Vec<Array2<f64>>,
    pub certification: Certification,
}

pub const CHECK_NAMES: [&str; 6] = [
    "strong_duality",
    "weak_duality",
    "no_double_switch",
    "switch_set_restriction",
    "error_propagation",
    "terminal_condition",
];

/// Triangular-condition scan over every node's cost matrix.
pub fn lattice_triangular(model: &LatticeModel) -> TriangularReport {
    let mut scan = TriangularScan::new(model.n_regimes);
    for m in model.costs.iter().flatten() {
        scan.add(|a, b| m[a][b]);
    }
    scan.finish()
}

/// Random martingale increments: Gaussian per child, centered per node.
pub fn random_penalty(model: &LatticeModel, scale: f64, seed: u64) -> Vec<Array2<f64>> {
    let mut rng = seeded(seed);
    let b = model.branching;
    (0..model.n_dates)
        .map(|level| {
            let mut raw = Array2::from_shape_simple_fn((model.level_size(level + 1), model.n_regimes), || {
                scale * { let z: f64 = StandardNormal.sample(&mut rng); z }
            });
            for (k, probs) in model.probs[level].iter().enumerate() {
                for r in 0..model.n_regimes {
                    let m: f64 = (0..b).map(|c| probs[c] * raw[[k * b + c, r]]).sum();
                    for c in 0..b {
                        raw[[k * b + c, r]] -= m;
                    }
                }
            }
            raw
        })
        .collect()
}

pub fn certify(model: &LatticeModel, config: &CertifyConfig) -> Result<OracleResult> {
    model.validate()?;
    let solution = exact_value(model);
    let doob = doob_martingale(model, &solution);
    let precondition = lattice_triangular(model);
    if !precondition.passes() {
        let why = format!(
            "switching costs are not strictly triangular ({:?}, min slack {:e})",
            precondition.status, precondition.min_slack
        );
        return Ok(OracleResult {
            solution,
            doob,
            certification: Certification {
                precondition,
                skipped: Some(why),
                checks: Vec::new(),
            },
        });
    }
    let tables = model.tables();
    let tol = config.tolerance;
    let doob_values = dual_backward(&tables, &model.leaf_increments(&doob))?;

    let mut checks = vec![strong_duality(model, &solution, &doob_values, tol)];

    let mut weak = Worst::new("weak_duality", tol);
    let mut terminal = Worst::new("terminal_condition", tol);
    terminal.terminal(model, &tables, &doob_values);
    for r in 0..config.random_penalties {
        let xi = random_penalty(model, config.penalty_scale, derive_seed(config.seed, "oracle-weak", r as u64));
        let v = dual_backward(&tables, &model.leaf_increments(&xi))?;
        terminal.terminal(model, &tables, &v);
        for level in 0..=model.n_dates {
            for i in 0..model.n_regimes {
                let mean = model.conditional_mean(level, |q| v.upper[[q, level, i]]);
                for (k, m) in mean.iter().enumerate() {
                    weak.record(solution.values[level][[k, i]] - m, level, k, i);
                }
            }
        }
    }
    checks.push(weak.finish());
    checks.push(no_double_switch(model, &solution));
    checks.push(switch_set_restriction(model, &solution, tol));

    let mut prop = Worst::new("error_propagation", tol);
    for r in 0..config.penalty_pairs {
        let a = random_penalty(model, config.penalty_scale, derive_seed(config.seed, "oracle-pair-a", r as u64));
        let b = random_penalty(model, config.penalty_scale, derive_seed(config.seed, "oracle-pair-b", r as u64));
        let (xa, xb) = (model.leaf_increments(&a), model.leaf_increments(&b));
        let va = dual_backward(&tables, &xa)?;
        let vb = dual_backward(&tables, &xb)?;
        for q in 0..model.n_leaves() {
            for s in 0..model.n_dates {
                let gap = |st: usize| {
                    (0..model.n_regimes)
                        .map(|i| (va.upper[[q, st, i]] - vb.upper[[q, st, i]]).abs())
                        .fold(0.0, f64::max)
                };
                let spread: f64 = (0..model.n_regimes).map(|i| (xa[[q, s, i]] - xb[[q, s, i]]).abs()).sum();
                prop.record(gap(s) - gap(s + 1) - spread, s, model.ancestor(q, s), 0);
            }
        }
    }
    checks.push(prop.finish());
    checks.push(terminal.finish());

    Ok(OracleResult {
        solution,
        doob,
        certification: Certification {
            precondition,
            skipped: None,
            checks,
        },
    })
}

struct Worst {
    name: &'static str,
    tol: f64,
    violation: f64,
    worst: Option<NodeRef>,
}

impl Worst {
    fn new(name: &'static str, tol: f64) -> Self {
        Worst {
            name,
            tol,
            violation: 0.0,
            worst: None,
        }
    }

    /// `excess > 0` is a violation.
    fn record(&mut self, excess: f64, level: usize, node: usize, regime: usize) {
        if excess > self.violation || excess.is_nan() {
            self.violation = if excess.is_nan() { f64::INFINITY } else { excess };
            self.worst = Some(NodeRef {
                level,
                node,
                regime: regime + 1,
            });
        }
    }

    fn terminal(&mut self, model: &LatticeModel, tables: &PayoffTables, v: &DualValues) {
        let n = model.n_dates;
        for q in 0..model.n_leaves() {
            for i in 0..model.n_regimes {
                self.record((v.upper[[q, n, i]] - tables.terminal[[q, i]]).abs(), n, q, i);
            }
        }
    }

    fn finish(self) -> CheckOutcome {
        CheckOutcome {
            name: self.name,
            passed: self.violation <= self.tol,
            max_violation: self.violation,
            worst: self.worst,
        }
    }
}

fn strong_duality(model: &LatticeModel, solution: &ExactSolution, v: &DualValues, tol: f64) -> CheckOutcome {
    let mut w = Worst::new("strong_duality", tol);
    for q in 0..model.n_leaves() {
        for level in 0..=model.n_dates {
            let k = model.ancestor(q, level);
            for i in 0..model.n_regimes {
                w.record((v.upper[[q, level, i]] - solution.values[level][[k, i]]).abs(), level, k, i);
            }
        }
    }
    w.finish()
}

fn no_double_switch(model: &LatticeModel, solution: &ExactSolution) -> CheckOutcome {
    let mut w = Worst::new("no_double_switch", 0.0);
    for (level, g) in solution.greedy.iter().enumerate() {
        for k in 0..model.level_size(level) {
            for i in 0..model.n_regimes {
                let first = g[[k, i]];
                if g[[k, first]] != first {
                    w.record(1.0, level, k, i);
                }
            }
        }
    }
    w.finish()
}

fn switch_set_restriction(model: &LatticeModel, solution: &ExactSolution, tol: f64) -> CheckOutcome {
    let mut w = Worst::new("switch_set_restriction", tol);
    for (level, g) in solution.greedy.iter().enumerate() {
        let cont = &solution.continuation[level];
        for k in 0..model.level_size(level) {
            let keep: Vec<usize> = (0..model.n_regimes).filter(|&r| g[[k, r]] == r).collect();
            for i in 0..model.n_regimes {
                let restricted = keep
                    .iter()
                    .map(|&r| cont[[k, r]] - model.costs[level][k][i][r])
                    .fold(f64::NEG_INFINITY, f64::max);
                w.record((restricted - solution.values[level][[k, i]]).abs(), level, k, i);
            }
        }
    }
    w.finish()
}

/// The exact greedy rule as a [`SwitchRule`], locating nodes by their state.
#[derive(Debug, Clone)]
pub struct LatticeRule {
    n_regimes: usize,
    greedy: Vec<Array2<usize>>,
    index: Vec<HashMap<Vec<u64>, usize>>,
}

fn state_key(x: impl IntoIterator<Item = f64>) -> Vec<u64> {
    x.into_iter().map(f64::to_bits).collect()
}

impl LatticeRule {
    /// Fails when two nodes at the same depth share a state.
    pub fn new(model: &LatticeModel, solution: &ExactSolution) -> Result<Self> {
        let mut index = Vec::with_capacity(model.n_dates);
        for level in 0..model.n_dates {
            let mut map = HashMap::new();
            for (k, s) in model.states[level].iter().enumerate() {
                if map.insert(state_key(s.iter().copied()), k).is_some() {
                    return Err(Error::config(format!("duplicate node state at depth {level}")));
                }
            }
            index.push(map);
        }
        Ok(LatticeRule {
            n_regimes: model.n_regimes,
            greedy: solution.greedy.clone(),
            index,
        })
    }
}

impl SwitchRule for LatticeRule {
    fn n_regimes(&self) -> usize {
        self.n_regimes
    }

    fn decide(&self, n: usize, _t: f64, states: ArrayView2<'_, f64>, current: &[usize]) -> Result<Vec<usize>> {
        states
            .rows()
            .into_iter()
            .zip(current)
            .map(|(row, &i)| {
                let k = self.index[n]
                    .get(&state_key(row.iter().copied()))
                    .ok_or_else(|| Error::config(format!("state off the lattice at depth {n}")))?;
                Ok(self.greedy[n][[*k, i]])
            })
            .collect()
    }
}
