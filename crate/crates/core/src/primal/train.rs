use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::policy::{argmax_rows, Policy, PolicyArch};
use super::scenario::{ScenarioBatch, ScenarioSource, SimulatedScenarios};
use super::stage::PrimalStage;
use crate::dual::TraceRow;
use crate::error::{Error, Result};
use crate::neural::{AdamConfig, AdamState, Mode};
use crate::payoff::SwitchingProblem;
use crate::rng::derive_seed;
use crate::sim::SimOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub inner_steps: usize,
    pub adam: AdamConfig,
    /// Softmax temperature at the first epoch, annealed linearly to `temperature_end`.
    pub temperature_start: f64,
    pub temperature_end: f64,
    pub arch: Option<PolicyArch>,
    pub seed: u64,
    pub memory_budget: usize,
}

impl Default for PrimalTrainConfig {
    fn default() -> Self {
        PrimalTrainConfig {
            epochs: 1040,
            batch_size: 4096,
            inner_steps: 1,
            adam: AdamConfig::default(),
            temperature_start: 1.0,
            temperature_end: 0.1,
            arch: None,
            seed: 0,
            memory_budget: SimOptions::default().memory_budget,
        }
    }
}

impl PrimalTrainConfig {
    pub fn temperature(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.temperature_end;
        }
        let frac = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.temperature_start + (self.temperature_end - self.temperature_start) * frac
    }
}

/// Backward-sweep trainer for the softmax-relaxed primal recursion.
#[derive(Debug, Clone)]
pub struct PrimalTrainer {
    config: PrimalTrainConfig,
    pub policy: Policy,
    adam: Vec<AdamState>,
    pub trace: Vec<TraceRow>,
    epochs_done: usize,
}

impl PrimalTrainer {
    pub fn new(dim: usize, n_regimes: usize, n_dates: usize, config: &PrimalTrainConfig) -> Result<Self> {
        if config.inner_steps == 0 {
            return Err(Error::config("inner_steps must be at least 1"));
        }
        if !(config.temperature_start > 0.0 && config.temperature_end > 0.0) {
            return Err(Error::config("temperatures must be positive"));
        }
        let arch = config.arch.clone().unwrap_or_else(|| PolicyArch::for_dim(dim));
        let policy = Policy::new(dim, n_regimes, n_dates, &arch, derive_seed(config.seed, "policy-init", 0))?;
        let adam = policy
            .nets
            .iter()
            .map(|n| AdamState::for_network(n, config.adam))
            .collect();
        Ok(PrimalTrainer {
            config: config.clone(),
            policy,
            adam,
            trace: Vec::new(),
            epochs_done: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn run(&mut self, source: &mut dyn ScenarioSource) -> Result<()> {
        let every = (self.config.epochs / 10).max(1);
        while self.epochs_done < self.config.epochs {
            let batch = source.batch(self.epochs_done)?;
            self.train_epoch(&batch)?;
            if self.epochs_done % every == 0 {
                let last = self.trace.iter().rev().find(|r| r.stage == 0).map(|r| r.loss);
                log::info!("primal epoch {}/{}: stage-0 loss {last:?}", self.epochs_done, self.config.epochs);
            }
        }
        self.policy.temperature = self.config.temperature(self.config.epochs.saturating_sub(1));
        if self.epochs_done > 0 {
            let batch = source.batch(self.epochs_done)?;
            self.recalibrate(&batch)?;
        }
        Ok(())
    }

    /// Resets every stage network's batch-norm running statistics to those of
    /// `batch` (all paths, every current regime) under the trained parameters.
    pub fn recalibrate(&mut self, batch: &ScenarioBatch) -> Result<()> {
        let j = self.policy.n_regimes;
        let b = batch.n_paths();
        let rows: Vec<usize> = (0..b * j).map(|r| r / j).collect();
        let current: Vec<usize> = (0..b * j).map(|r| r % j).collect();
        for s in 0..batch.n_stages().min(self.policy.n_dates()) {
            let states = batch.states.index_axis(Axis(1), s).select(Axis(0), &rows);
            let inputs = self.policy.features(batch.times[s], states.view(), &current)?;
            self.policy.nets[s].recalibrate_batch_norm(inputs.view())?;
        }
        Ok(())
    }

    /// One backward sweep over `batch` (which must start at date 0).
    pub fn train_epoch(&mut self, batch: &ScenarioBatch) -> Result<()> {
        batch.validate()?;
        if batch.tables.first_date != 0 || batch.n_stages() != self.policy.n_dates() {
            return Err(Error::config("primal training needs scenarios covering every date"));
        }
        let epoch = self.epochs_done;
        let tau = self.config.temperature(epoch);
        let j = self.policy.n_regimes;
        let mut cont = batch.tables.terminal.clone();
        for s in (0..batch.n_stages()).rev() {
            let stage = PrimalStage::new(&self.policy, batch, s, &cont, tau)?;
            for _ in 0..self.config.inner_steps {
                let net = &mut self.policy.nets[s];
                let (loss, grads) = stage.loss_and_gradient(net)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, stage: s, loss });
                }
                let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
                self.adam[s].step(net, &grads)?;
                self.trace.push(TraceRow {
                    epoch,
                    stage: s,
                    loss,
                    grad_norm: norm,
                });
            }
            // continuation under the hard rule of the updated network
            let logits = self.policy.nets[s].forward(stage.inputs.view(), Mode::Train)?;
            let choice = argmax_rows(&logits);
            let mut next = Array2::zeros((batch.n_paths(), j));
            for (r, &k) in choice.iter().enumerate() {
                next[[r / j, r % j]] = stage.values[[r, k]];
            }
            cont = next;
        }
        self.epochs_done += 1;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PrimalTrainResult {
    pub policy: Policy,
    pub trace: Vec<TraceRow>,
}

pub fn train_policy_on(source: &mut dyn ScenarioSource, config: &PrimalTrainConfig) -> Result<PrimalTrainResult> {
    let mut trainer = PrimalTrainer::new(source.dim(), source.n_regimes(), source.n_dates(), config)?;
    trainer.run(source)?;
    Ok(PrimalTrainResult {
        policy: trainer.policy,
        trace: trainer.trace,
    })
}

pub fn train_policy(problem: &SwitchingProblem, config: &PrimalTrainConfig) -> Result<PrimalTrainResult> {
    let mut source = SimulatedScenarios {
        problem,
        batch_size: config.batch_size,
        seed: config.seed,
        memory_budget: config.memory_budget,
    };
    train_policy_on(&mut source, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoff::{CostSpec, ProblemSpec};
    use crate::primal::{evaluate_policy_mc, RandomRule};
    use crate::sim::TimeGrid;

    #[test]
    fn temperature_anneals_linearly() {
        let c = PrimalTrainConfig {
            epochs: 11,
            ..Default::default()
        };
        assert_eq!(c.temperature(0), 1.0);
        assert!((c.temperature(5) - 0.55).abs() < 1e-12);
        assert!((c.temperature(10) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn single_regime_policy_is_trivial() {
        let mut spec = ProblemSpec::gbm_three_regime(2);
        spec.grid = TimeGrid::new(1.0, 3, 4).unwrap();
        spec.running = vec!["mean(x)".into()];
        spec.terminal = vec!["x1".into()];
        let p = SwitchingProblem::from_spec(spec).unwrap();
        let cfg = PrimalTrainConfig {
            epochs: 2,
            batch_size: 64,
            ..Default::default()
        };
        let trained = train_policy(&p, &cfg).unwrap();
        assert!(trained.trace.iter().all(|r| r.grad_norm == 0.0));
        let r = evaluate_policy_mc(&p, &trained.policy, 200, 9, 64).unwrap();
        assert_eq!(r.regimes[0].max_switches, 0);
    }

    #[test]
    fn trained_policy_beats_random_decisions() {
        let mut spec = ProblemSpec::gbm_three_regime(2);
        spec.grid = TimeGrid::new(1.0, 4, 8).unwrap();
        spec.costs = CostSpec::Distance {
            scale: 0.3,
            exponent: 0.9,
            offset: 0.05,
        };
        let p = SwitchingProblem::from_spec(spec).unwrap();
        let cfg = PrimalTrainConfig {
            epochs: 40,
            batch_size: 512,
            adam: AdamConfig {
                lr: 5e-3,
                ..Default::default()
            },
            seed: 2,
            ..Default::default()
        };
        let trained = train_policy(&p, &cfg).unwrap();
        let lb = evaluate_policy_mc(&p, &trained.policy, 4096, 77, 1024).unwrap();
        let rnd = evaluate_policy_mc(&p, &RandomRule { n_regimes: 3, seed: 1 }, 4096, 77, 1024).unwrap();
        for i in 0..3 {
            let (a, b) = (lb.regimes[i], rnd.regimes[i]);
            assert!(a.mean + 3.0 * (a.std_error + b.std_error) >= b.mean, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn hard_policy_matches_lattice_dynamic_programme() {
        use crate::oracle::{exact_value, LatticeModel, RandomLattice};
        use crate::primal::{evaluate_policy, FixedScenarios, SwitchRule};
        use ndarray::Array2;

        let model = LatticeModel::random(&RandomLattice::new(2, 2, 2), 21).unwrap();
        let exact = exact_value(&model);
        let batch = model.scenarios();
        let cfg = PrimalTrainConfig {
            epochs: 400,
            adam: AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            temperature_end: 0.05,
            seed: 3,
            ..Default::default()
        };
        let mut source = FixedScenarios {
            batch: batch.clone(),
            n_regimes: 2,
        };
        let trained = train_policy_on(&mut source, &cfg).unwrap();
        let mut checked = 0;
        for n in 0..2 {
            for k in 0..model.level_size(n) {
                let x = Array2::from_shape_vec((1, 2), model.states[n][k].clone()).unwrap();
                for i in 0..2 {
                    let cont = exact.continuation[n].row(k);
                    let gain = |j: usize| cont[j] - model.costs[n][k][i][j];
                    if (gain(0) - gain(1)).abs() < 0.05 {
                        continue;
                    }
                    let got = trained.policy.decide(n, model.date_time(n), x.view(), &[i]).unwrap()[0];
                    assert_eq!(got, exact.greedy[n][[k, i]], "date {n} node {k} regime {i}");
                    checked += 1;
                }
            }
        }
        assert!(checked >= 4, "instance too degenerate ({checked} decisions)");
        let lb = evaluate_policy(&trained.policy, &batch).unwrap();
        for i in 0..2 {
            assert!(lb.regimes[i].mean <= exact.values[0][[0, i]] + 1e-12);
        }
    }
}
