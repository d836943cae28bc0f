use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::payoff::PayoffTables;
use crate::primal::ScenarioBatch;
use crate::rng::seeded;

/// Non-recombining `b`-ary tree over dates `t_0..t_N` with one observation per
/// interval. Node `k` at depth `n` has children `k b + c`, `c < b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeModel {
    pub branching: usize,
    pub n_dates: usize,
    pub n_regimes: usize,
    pub horizon: f64,
    /// `states[n][k]`: state vector of node `k` at depth `n`.
    pub states: Vec<Vec<Vec<f64>>>,
    /// `probs[n][k][c]`, depths `n < N`.
    pub probs: Vec<Vec<Vec<f64>>>,
    /// `running[n][child][j]`: reward of regime `j` over `(t_n, t_{n+1}]` on the
    /// branch ending at `child` (a depth `n + 1` index).
    pub running: Vec<Vec<Vec<f64>>>,
    /// `costs[n][k][i][j]`: cost of switching `i -> j` at node `k`, depth `n < N`.
    pub costs: Vec<Vec<Vec<Vec<f64>>>>,
    /// `terminal[leaf][j]`.
    pub terminal: Vec<Vec<f64>>,
}

/// Parameters of [`LatticeModel::random`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomLattice {
    pub branching: usize,
    pub n_dates: usize,
    pub n_regimes: usize,
    pub dim: usize,
    pub cost_scale: f64,
    pub cost_exponent: f64,
    pub cost_offset: f64,
}

impl RandomLattice {
    pub fn new(branching: usize, n_dates: usize, n_regimes: usize) -> Self {
        RandomLattice {
            branching,
            n_dates,
            n_regimes,
            dim: 2,
            cost_scale: 0.3,
            cost_exponent: 0.9,
            cost_offset: 0.05,
        }
    }
}

impl LatticeModel {
    /// Random instance. Switching costs are `scale |i-j|^exponent + offset` off
    /// the diagonal, multiplied by a node factor in `[0.8, 1.2]`.
    pub fn random(spec: &RandomLattice, seed: u64) -> Result<Self> {
        let RandomLattice {
            branching: b,
            n_dates: n,
            n_regimes: j,
            dim: d,
            ..
        } = *spec;
        if b == 0 || n == 0 || j == 0 || d == 0 {
            return Err(Error::config("lattice needs b, N, J, d >= 1"));
        }
        let mut rng = seeded(seed);
        let mut states = vec![vec![(0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()]];
        for level in 0..n {
            let next = states[level]
                .iter()
                .flat_map(|s| {
                    (0..b)
                        .map(|_| s.iter().map(|&x| x + 0.5 * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect())
                        .collect::<Vec<Vec<f64>>>()
                })
                .collect();
            states.push(next);
        }
        let probs = (0..n)
            .map(|level| {
                (0..b.pow(level as u32))
                    .map(|_| {
                        let raw: Vec<f64> = (0..b).map(|_| rng.gen_range(0.1..1.0)).collect();
                        let total: f64 = raw.iter().sum();
                        raw.iter().map(|r| r / total).collect()
                    })
                    .collect()
            })
            .collect();
        let running = (0..n)
            .map(|level| {
                (0..b.pow(level as u32 + 1))
                    .map(|_| (0..j).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let costs = (0..n)
            .map(|level| {
                (0..b.pow(level as u32))
                    .map(|_| {
                        let f = rng.gen_range(0.8..1.2);
                        (0..j)
                            .map(|a| {
                                (0..j)
                                    .map(|c| {
                                        if a == c {
                                            0.0
                                        } else {
                                            let gap = (a as f64 - c as f64).abs();
                                            f * (spec.cost_scale * gap.powf(spec.cost_exponent) + spec.cost_offset)
                                        }
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let terminal = (0..b.pow(n as u32))
            .map(|_| (0..j).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let model = LatticeModel {
            branching: b,
            n_dates: n,
            n_regimes: j,
            horizon: 1.0,
            states,
            probs,
            running,
            costs,
            terminal,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn level_size(&self, n: usize) -> usize {
        self.branching.pow(n as u32)
    }

    pub fn n_leaves(&self) -> usize {
        self.level_size(self.n_dates)
    }

    pub fn dim(&self) -> usize {
        self.states[0][0].len()
    }

    pub fn date_time(&self, n: usize) -> f64 {
        self.horizon * n as f64 / self.n_dates as f64
    }

    /// Depth-`level` ancestor of `leaf`.
    pub fn ancestor(&self, leaf: usize, level: usize) -> usize {
        leaf / self.level_size(self.n_dates - level)
    }

    pub fn validate(&self) -> Result<()> {
        let (b, n, j) = (self.branching, self.n_dates, self.n_regimes);
        if b == 0 || n == 0 || j == 0 {
            return Err(Error::config("lattice needs b, N, J >= 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("lattice horizon must be positive"));
        }
        let shape = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::shape(format!("lattice {what}"))) };
        shape(self.states.len() == n + 1, "states needs N + 1 levels")?;
        shape(!self.states[0].is_empty() && !self.states[0][0].is_empty(), "root state is empty")?;
        let d = self.dim();
        for (level, nodes) in self.states.iter().enumerate() {
            shape(nodes.len() == self.level_size(level), "level size must be b^n")?;
            shape(nodes.iter().all(|s| s.len() == d), "state dimension varies")?;
        }
        shape(self.probs.len() == n && self.running.len() == n && self.costs.len() == n, "needs N stages")?;
        for level in 0..n {
            shape(self.probs[level].len() == self.level_size(level), "probability level size")?;
            for (k, p) in self.probs[level].iter().enumerate() {
                shape(p.len() == b, "probabilities per node must equal b")?;
                let total: f64 = p.iter().sum();
                if p.iter().any(|&q| !(q >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                    return Err(Error::config(format!(
                        "probabilities at depth {level}, node {k} do not form a distribution (sum {total})"
                    )));
                }
            }
            shape(self.running[level].len() == self.level_size(level + 1), "running rewards sit on children")?;
            shape(self.running[level].iter().all(|r| r.len() == j), "running reward per regime")?;
            shape(self.costs[level].len() == self.level_size(level), "cost level size")?;
            shape(
                self.costs[level].iter().all(|m| m.len() == j && m.iter().all(|r| r.len() == j)),
                "cost matrices must be J x J",
            )?;
        }
        shape(self.terminal.len() == self.n_leaves() && self.terminal.iter().all(|r| r.len() == j), "terminal table")?;
        let finite = self.running.iter().flatten().flatten().all(|v| v.is_finite())
            && self.costs.iter().flatten().flatten().flatten().all(|v| v.is_finite())
            && self.terminal.iter().flatten().all(|v| v.is_finite())
            && self.states.iter().flatten().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("lattice tables contain non-finite entries"));
        }
        Ok(())
    }

    /// Probability of each leaf path.
    pub fn leaf_weights(&self) -> Vec<f64> {
        let mut w = vec![1.0];
        for level in 0..self.n_dates {
            w = w
                .iter()
                .enumerate()
                .flat_map(|(k, &wk)| self.probs[level][k].iter().map(move |&p| wk * p))
                .collect();
        }
        w
    }

    /// Leaf paths as payoff tables, `[leaf, stage, ...]`.
    pub fn tables(&self) -> PayoffTables {
        let (l, n, j) = (self.n_leaves(), self.n_dates, self.n_regimes);
        PayoffTables {
            first_date: 0,
            running: Array3::from_shape_fn((l, n, j), |(q, s, r)| self.running[s][self.ancestor(q, s + 1)][r]),
            costs: Array4::from_shape_fn((l, n, j, j), |(q, s, a, c)| self.costs[s][self.ancestor(q, s)][a][c]),
            terminal: Array2::from_shape_fn((l, j), |(q, r)| self.terminal[q][r]),
        }
    }

    /// Leaf paths as a probability-weighted scenario batch.
    pub fn scenarios(&self) -> ScenarioBatch {
        let (l, n, d) = (self.n_leaves(), self.n_dates, self.dim());
        ScenarioBatch {
            tables: self.tables(),
            times: (0..n).map(|s| self.date_time(s)).collect(),
            states: Array3::from_shape_fn((l, n, d), |(q, s, c)| self.states[s][self.ancestor(q, s)][c]),
            weights: Some(Array1::from(self.leaf_weights())),
        }
    }

    /// Spreads per-edge increments `xi[n]` (`[b^{n+1}, J]`) onto leaf paths.
    pub fn leaf_increments(&self, xi: &[Array2<f64>]) -> Array3<f64> {
        let (l, n, j) = (self.n_leaves(), self.n_dates, self.n_regimes);
        Array3::from_shape_fn((l, n, j), |(q, s, r)| xi[s][[self.ancestor(q, s + 1), r]])
    }

    /// Conditional expectation at every depth-`level` node of a leaf quantity.
    pub fn conditional_mean(&self, level: usize, leaf_values: impl Fn(usize) -> f64) -> Vec<f64> {
        let w = self.leaf_weights();
        let per = self.level_size(self.n_dates - level);
        (0..self.level_size(level))
            .map(|k| {
                let span = k * per..(k + 1) * per;
                let mass: f64 = w[span.clone()].iter().sum();
                span.map(|q| w[q] * leaf_values(q)).sum::<f64>() / mass
            })
            .collect()
    }

    /// Leaves drawn with their path probabilities.
    pub fn sample_leaves(&self, n: usize, seed: u64) -> Vec<usize> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| {
                let mut k = 0;
                for level in 0..self.n_dates {
                    let u: f64 = rng.gen();
                    let p = &self.probs[level][k];
                    let mut acc = 0.0;
                    let mut c = p.len() - 1;
                    for (idx, &q) in p.iter().enumerate() {
                        acc += q;
                        if u < acc {
                            c = idx;
                            break;
                        }
                    }
                    k = k * self.branching + c;
                }
                k
            })
            .collect()
    }
}
