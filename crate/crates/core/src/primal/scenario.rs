use ndarray::{Array1, Array3, Axis};

use crate::error::{Error, Result};
use crate::payoff::{evaluate_payoffs, PayoffTables, SwitchingProblem};
use crate::rng::derive_seed;
use crate::sim::{simulate, PathBatch, SimOptions};

/// Payoff tables plus the decision-date states they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBatch {
    pub tables: PayoffTables,
    /// `t_n` of each stage.
    pub times: Vec<f64>,
    /// State at each stage's opening date, `[path, stage, d]`.
    pub states: Array3<f64>,
    /// Path probabilities (summing to one); uniform when absent.
    pub weights: Option<Array1<f64>>,
}

impl ScenarioBatch {
    pub fn from_paths(problem: &SwitchingProblem, paths: &PathBatch) -> Result<Self> {
        let tables = evaluate_payoffs(problem, paths)?;
        Ok(Self::with_tables(paths, tables))
    }

    pub fn with_tables(paths: &PathBatch, tables: PayoffTables) -> Self {
        let stages = tables.n_stages();
        let k = paths.grid.substeps;
        let states = paths
            .states
            .select(Axis(1), &(0..stages).map(|s| s * k).collect::<Vec<_>>());
        ScenarioBatch {
            times: (0..stages)
                .map(|s| paths.grid.date_time(paths.first_date + s))
                .collect(),
            tables,
            states,
            weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (b, stages, _) = self.states.dim();
        if b != self.tables.n_paths() || stages != self.tables.n_stages() || self.times.len() != stages {
            return Err(Error::shape("scenario states, times and tables disagree"));
        }
        if let Some(w) = &self.weights {
            if w.len() != b {
                return Err(Error::shape("one weight per path required"));
            }
        }
        Ok(())
    }

    pub fn n_paths(&self) -> usize {
        self.tables.n_paths()
    }

    pub fn n_stages(&self) -> usize {
        self.tables.n_stages()
    }

    pub fn dim(&self) -> usize {
        self.states.len_of(Axis(2))
    }

    /// Weight of path `p` in a batch mean.
    pub(crate) fn weight(&self, p: usize) -> f64 {
        match &self.weights {
            Some(w) => w[p],
            None => 1.0 / self.n_paths() as f64,
        }
    }
}

/// Supplies one training batch per epoch.
pub trait ScenarioSource {
    fn dim(&self) -> usize;
    fn n_regimes(&self) -> usize;
    fn n_dates(&self) -> usize;
    fn batch(&mut self, epoch: usize) -> Result<ScenarioBatch>;
}

/// Fresh simulated paths each epoch.
#[derive(Debug, Clone)]
pub struct SimulatedScenarios<'a> {
    pub problem: &'a SwitchingProblem,
    pub batch_size: usize,
    pub seed: u64,
    pub memory_budget: usize,
}

impl ScenarioSource for SimulatedScenarios<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn n_regimes(&self) -> usize {
        self.problem.n_regimes()
    }

    fn n_dates(&self) -> usize {
        self.problem.grid.n_dates
    }

    fn batch(&mut self, epoch: usize) -> Result<ScenarioBatch> {
        let paths = simulate(
            &self.problem.dynamics,
            &self.problem.grid,
            self.batch_size,
            derive_seed(self.seed, "primal-train", epoch as u64),
            &SimOptions {
                memory_budget: self.memory_budget,
                path_offset: 0,
            },
        )?;
        ScenarioBatch::from_paths(self.problem, &paths)
    }
}

/// The same fixed batch every epoch (for example, all leaf paths of a lattice).
#[derive(Debug, Clone)]
pub struct FixedScenarios {
    pub batch: ScenarioBatch,
    pub n_regimes: usize,
}

impl ScenarioSource for FixedScenarios {
    fn dim(&self) -> usize {
        self.batch.dim()
    }

    fn n_regimes(&self) -> usize {
        self.n_regimes
    }

    fn n_dates(&self) -> usize {
        self.batch.n_stages()
    }

    fn batch(&mut self, _epoch: usize) -> Result<ScenarioBatch> {
        Ok(self.batch.clone())
    }
}
