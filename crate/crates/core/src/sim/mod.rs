//! State-path simulation on the fine subgrid between intervention dates.

mod dump;
mod dynamics;
mod paths;

pub use dump::{read_dump, write_dump, DumpHeader};
pub use dynamics::Dynamics;
pub use paths::{simulate, simulate_conditional, PathBatch, SimOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intervention dates `t_n = nT/N` refined by `K` uniform substeps per interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_dates: usize,
    pub substeps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_dates: usize, substeps: usize) -> Result<Self> {
        let grid = TimeGrid {
            horizon,
            n_dates,
            substeps,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_dates == 0 || self.substeps == 0 {
            return Err(Error::config(format!(
                "grid needs N >= 1 and K >= 1 (got N = {}, K = {})",
                self.n_dates, self.substeps
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config(format!(
                "non-positive step: horizon {} gives dt = {}",
                self.horizon,
                self.dt()
            )));
        }
        Ok(())
    }

    /// Substep length `T / (N K)`.
    pub fn dt(&self) -> f64 {
        self.horizon / (self.n_dates * self.substeps) as f64
    }

    /// Interval length `T / N`.
    pub fn date_spacing(&self) -> f64 {
        self.horizon / self.n_dates as f64
    }

    /// Total number of substeps `N K`.
    pub fn total_steps(&self) -> usize {
        self.n_dates * self.substeps
    }

    pub fn date_time(&self, n: usize) -> f64 {
        self.step_time(n * self.substeps)
    }

    /// `t_k^n = t_n + k dt`; `t_K^n` coincides with `t_0^{n+1}`.
    pub fn sub_time(&self, n: usize, k: usize) -> f64 {
        self.step_time(n * self.substeps + k)
    }

    /// Time of global substep index `g = nK + k`.
    pub fn step_time(&self, g: usize) -> f64 {
        self.horizon * g as f64 / self.total_steps() as f64
    }
}
