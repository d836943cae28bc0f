use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::baseline::Baseline;
use super::penalty::{DualPenalty, PenaltyArch};
use super::stage::DualStage;
use crate::error::{Error, Result};
use crate::neural::{AdamConfig, AdamState};
use crate::payoff::{evaluate_payoffs, PayoffTables, SwitchingProblem};
use crate::rng::derive_seed;
use crate::sim::{simulate, PathBatch, SimOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualLoss {
    /// (D1) mean of the stage value.
    #[serde(alias = "d1")]
    Upper,
    /// (D2) mean squared distance to the baseline.
    #[serde(alias = "d2")]
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam steps per stage per epoch.
    pub inner_steps: usize,
    pub adam: AdamConfig,
    pub loss: DualLoss,
    pub baseline: Baseline,
    /// 0-based reference regime; the problem's when unset.
    pub reference_regime: Option<usize>,
    /// Average the stage loss over all starting regimes instead of `i0` only.
    pub all_regimes: bool,
    /// Defaults to [`PenaltyArch::for_problem`].
    pub arch: Option<PenaltyArch>,
    pub seed: u64,
    pub memory_budget: usize,
}

impl Default for DualTrainConfig {
    fn default() -> Self {
        DualTrainConfig {
            epochs: 1040,
            batch_size: 4096,
            inner_steps: 1,
            adam: AdamConfig::default(),
            loss: DualLoss::L2,
            baseline: Baseline::Zero,
            reference_regime: None,
            all_regimes: false,
            arch: None,
            seed: 0,
            memory_budget: SimOptions::default().memory_budget,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub stage: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Backward-sweep trainer for the DeepMartingale penalty.
#[derive(Debug, Clone)]
pub struct DualTrainer {
    problem: SwitchingProblem,
    config: DualTrainConfig,
    i0: usize,
    pub penalty: DualPenalty,
    adam: Vec<Vec<AdamState>>,
    adam_jump: Option<Vec<Vec<AdamState>>>,
    pub trace: Vec<TraceRow>,
    epochs_done: usize,
}

impl DualTrainer {
    pub fn new(problem: &SwitchingProblem, config: &DualTrainConfig) -> Result<Self> {
        if config.batch_size < 2 && config.epochs > 0 {
            return Err(Error::config("batch size must be at least 2 for batch statistics"));
        }
        if config.inner_steps == 0 {
            return Err(Error::config("inner_steps must be at least 1"));
        }
        let i0 = config.reference_regime.unwrap_or(problem.reference_regime);
        if i0 >= problem.n_regimes() {
            return Err(Error::config(format!(
                "reference regime {} outside 1..={}",
                i0 + 1,
                problem.n_regimes()
            )));
        }
        config.baseline.validate(problem.dim())?;
        let arch = config.arch.clone().unwrap_or_else(|| PenaltyArch::for_problem(problem));
        let penalty = DualPenalty::new(problem, &arch, derive_seed(config.seed, "dual-init", 0))?;
        let states = |nets: &Vec<Vec<crate::neural::Network>>| -> Vec<Vec<AdamState>> {
            nets.iter()
                .map(|row| row.iter().map(|n| AdamState::for_network(n, config.adam)).collect())
                .collect()
        };
        Ok(DualTrainer {
            problem: problem.clone(),
            config: config.clone(),
            i0,
            adam: states(&penalty.nets),
            adam_jump: penalty.jump_nets.as_ref().map(states),
            penalty,
            trace: Vec::new(),
            epochs_done: 0,
        })
    }

    pub fn reference_regime(&self) -> usize {
        self.i0
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn run(&mut self) -> Result<()> {
        let every = (self.config.epochs / 10).max(1);
        while self.epochs_done < self.config.epochs {
            self.run_epoch()?;
            if self.epochs_done % every == 0 {
                log::info!(
                    "dual epoch {}/{}: stage-0 loss {:?}",
                    self.epochs_done,
                    self.config.epochs,
                    self.last_stage0_loss()
                );
            }
        }
        if self.epochs_done > 0 {
            self.recalibrate()?;
        }
        Ok(())
    }

    /// Resets the batch-norm running statistics of every stage network to
    /// those of one fresh batch under the trained parameters.
    pub fn recalibrate(&mut self) -> Result<()> {
        let seed = derive_seed(self.config.seed, "dual-recalibrate", 0);
        let options = SimOptions {
            memory_budget: self.config.memory_budget,
            path_offset: 0,
        };
        let paths = simulate(
            &self.problem.dynamics,
            &self.problem.grid,
            self.config.batch_size,
            seed,
            &options,
        )?;
        for n in 0..self.problem.grid.n_dates {
            let inputs = self.penalty.stage_inputs(&paths, n);
            for net in &mut self.penalty.nets[n] {
                net.recalibrate_batch_norm(inputs.view())?;
            }
            if let Some(jn) = &mut self.penalty.jump_nets {
                for net in &mut jn[n] {
                    net.recalibrate_batch_norm(inputs.view())?;
                }
            }
        }
        Ok(())
    }

    /// One pass of the backward sweep on a fresh batch.
    pub fn run_epoch(&mut self) -> Result<()> {
        let epoch = self.epochs_done;
        let seed = derive_seed(self.config.seed, "dual-train", epoch as u64);
        let options = SimOptions {
            memory_budget: self.config.memory_budget,
            path_offset: 0,
        };
        let paths = simulate(
            &self.problem.dynamics,
            &self.problem.grid,
            self.config.batch_size,
            seed,
            &options,
        )?;
        let tables = evaluate_payoffs(&self.problem, &paths)?;
        let mut next = tables.terminal.clone();
        for n in (0..self.problem.grid.n_dates).rev() {
            next = self.train_stage(epoch, n, &paths, &tables, &next)?;
        }
        self.epochs_done += 1;
        Ok(())
    }

    fn train_stage(
        &mut self,
        epoch: usize,
        n: usize,
        paths: &PathBatch,
        tables: &PayoffTables,
        next: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        let eta = match self.config.loss {
            DualLoss::L2 => Some(self.config.baseline.eval(
                n,
                self.problem.grid.n_dates,
                self.problem.grid.date_time(n),
                paths.date_states(n),
            )?),
            DualLoss::Upper => None,
        };
        let regimes: Vec<usize> = if self.config.all_regimes {
            (0..self.problem.n_regimes()).collect()
        } else {
            vec![self.i0]
        };
        let stage = DualStage::new(&self.penalty, paths, tables, n, next, eta, regimes);

        for _ in 0..self.config.inner_steps {
            let g = stage.loss_and_gradients(&mut self.penalty)?;
            if !g.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    stage: n,
                    loss: g.loss,
                });
            }
            let mut sq = 0.0;
            for (i, grads) in g.nets.iter().enumerate() {
                sq += grads.iter().map(|v| v * v).sum::<f64>();
                self.adam[n][i].step(&mut self.penalty.nets[n][i], grads)?;
            }
            if let (Some(jg), Some(jn), Some(adam)) = (&g.jump_nets, &mut self.penalty.jump_nets, &mut self.adam_jump) {
                for (i, grads) in jg.iter().enumerate() {
                    sq += grads.iter().map(|v| v * v).sum::<f64>();
                    adam[n][i].step(&mut jn[n][i], grads)?;
                }
            }
            self.trace.push(TraceRow {
                epoch,
                stage: n,
                loss: g.loss,
                grad_norm: sq.sqrt(),
            });
        }

        // roll down with the updated stage-n parameters
        let xi = stage.increments(&mut self.penalty)?;
        stage.values(&xi)
    }

    /// Mean of the last trace rows at stage 0 (a convergence summary).
    pub fn last_stage0_loss(&self) -> Option<f64> {
        self.trace.iter().rev().find(|r| r.stage == 0).map(|r| r.loss)
    }

    pub fn into_penalty(self) -> DualPenalty {
        self.penalty
    }
}

/// Trained penalty and its loss trace.
#[derive(Debug, Clone)]
pub struct DualTrainResult {
    pub penalty: DualPenalty,
    pub trace: Vec<TraceRow>,
}

pub fn train_dual(problem: &SwitchingProblem, config: &DualTrainConfig) -> Result<DualTrainResult> {
    let mut trainer = DualTrainer::new(problem, config)?;
    trainer.run()?;
    Ok(DualTrainResult {
        penalty: trainer.penalty,
        trace: trainer.trace,
    })
}
