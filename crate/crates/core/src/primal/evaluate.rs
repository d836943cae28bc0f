use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::policy::SwitchRule;
use super::scenario::ScenarioBatch;
use crate::error::{Error, Result};
use crate::payoff::SwitchingProblem;
use crate::sim::{simulate, SimOptions};
use crate::stats::RunningStats;

/// Realised payoff and switch count per path and starting regime.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRollout {
    /// `[path, i]`.
    pub values: Array2<f64>,
    pub switches: Array2<usize>,
}

/// Rolls the hard decisions of `rule` forward from every starting regime.
pub fn rollout(rule: &dyn SwitchRule, batch: &ScenarioBatch) -> Result<PolicyRollout> {
    batch.validate()?;
    let b = batch.n_paths();
    let j = batch.tables.n_regimes();
    if rule.n_regimes() != j {
        return Err(Error::shape(format!("rule has {} regimes, problem {j}", rule.n_regimes())));
    }
    let mut current: Vec<usize> = (0..b * j).map(|r| r % j).collect();
    let mut values = Array2::<f64>::zeros((b, j));
    let mut switches = Array2::<usize>::zeros((b, j));
    let rows: Vec<usize> = (0..b * j).map(|r| r / j).collect();
    for s in 0..batch.n_stages() {
        let states = batch.states.index_axis(Axis(1), s).select(Axis(0), &rows);
        let n = batch.tables.first_date + s;
        let next = rule.decide(n, batch.times[s], states.view(), &current)?;
        for (r, (&to, from)) in next.iter().zip(current.iter_mut()).enumerate() {
            if to >= j {
                return Err(Error::shape(format!("rule chose regime {to} of {j}")));
            }
            let (p, i) = (r / j, r % j);
            values[[p, i]] += batch.tables.running[[p, s, to]] - batch.tables.costs[[p, s, *from, to]];
            if to != *from {
                switches[[p, i]] += 1;
            }
            *from = to;
        }
    }
    for (r, &c) in current.iter().enumerate() {
        values[[r / j, r % j]] += batch.tables.terminal[[r / j, c]];
    }
    Ok(PolicyRollout { values, switches })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeLowerBound {
    /// 1-based starting regime.
    pub regime: usize,
    pub mean: f64,
    pub std_error: f64,
    pub mean_switches: f64,
    pub max_switches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub n_paths: usize,
    pub regimes: Vec<RegimeLowerBound>,
}

/// Accumulates rollouts over chunks of fresh paths.
#[derive(Debug, Clone)]
pub struct LowerBoundAccumulator {
    values: Vec<RunningStats>,
    switches: Vec<RunningStats>,
    max_switches: Vec<usize>,
}

impl LowerBoundAccumulator {
    pub fn new(n_regimes: usize) -> Self {
        LowerBoundAccumulator {
            values: vec![RunningStats::default(); n_regimes],
            switches: vec![RunningStats::default(); n_regimes],
            max_switches: vec![0; n_regimes],
        }
    }

    pub fn add(&mut self, r: &PolicyRollout) {
        for i in 0..self.values.len() {
            self.values[i].extend(r.values.column(i).iter().copied());
            self.switches[i].extend(r.switches.column(i).iter().map(|&s| s as f64));
            self.max_switches[i] = self.max_switches[i].max(r.switches.column(i).iter().copied().max().unwrap_or(0));
        }
    }

    pub fn report(&self) -> LowerBoundReport {
        LowerBoundReport {
            n_paths: self.values.first().map_or(0, |s| s.count),
            regimes: (0..self.values.len())
                .map(|i| RegimeLowerBound {
                    regime: i + 1,
                    mean: self.values[i].mean,
                    std_error: self.values[i].std_error(),
                    mean_switches: self.switches[i].mean,
                    max_switches: self.max_switches[i],
                })
                .collect(),
        }
    }
}

/// Lower-bound report of `rule` on `batch` (probability-weighted when the
/// batch carries weights).
pub fn evaluate_policy(rule: &dyn SwitchRule, batch: &ScenarioBatch) -> Result<LowerBoundReport> {
    let r = rollout(rule, batch)?;
    if batch.weights.is_none() {
        let mut acc = LowerBoundAccumulator::new(batch.tables.n_regimes());
        acc.add(&r);
        return Ok(acc.report());
    }
    let b = batch.n_paths();
    let regimes = (0..batch.tables.n_regimes())
        .map(|i| {
            let mean: f64 = (0..b).map(|p| batch.weight(p) * r.values[[p, i]]).sum();
            let var: f64 = (0..b)
                .map(|p| batch.weight(p) * (r.values[[p, i]] - mean).powi(2))
                .sum();
            RegimeLowerBound {
                regime: i + 1,
                mean,
                std_error: (var / b as f64).sqrt(),
                mean_switches: (0..b).map(|p| batch.weight(p) * r.switches[[p, i]] as f64).sum(),
                max_switches: r.switches.column(i).iter().copied().max().unwrap_or(0),
            }
        })
        .collect();
    Ok(LowerBoundReport { n_paths: b, regimes })
}

/// Lower bound on `n_paths` fresh simulated paths, processed in chunks.
pub fn evaluate_policy_mc(
    problem: &SwitchingProblem,
    rule: &dyn SwitchRule,
    n_paths: usize,
    seed: u64,
    chunk: usize,
) -> Result<LowerBoundReport> {
    let mut acc = LowerBoundAccumulator::new(problem.n_regimes());
    let chunk = chunk.max(1);
    let mut done = 0;
    while done < n_paths {
        let m = chunk.min(n_paths - done);
        let paths = simulate(
            &problem.dynamics,
            &problem.grid,
            m,
            seed,
            &SimOptions {
                path_offset: done as u64,
                ..SimOptions::default()
            },
        )?;
        acc.add(&rollout(rule, &ScenarioBatch::from_paths(problem, &paths)?)?);
        done += m;
    }
    Ok(acc.report())
}
