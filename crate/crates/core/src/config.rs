//! Run configuration shared by the command-line front end and the acceptance
//! suite: problem source, training and evaluation settings, presets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dual::{Baseline, DualTrainConfig};
use crate::error::{Error, Result};
use crate::eval::{EvalOptions, HedgeSign};
use crate::neural::AdamConfig;
use crate::oracle::CertifyConfig;
use crate::payoff::{ProblemSpec, SwitchingProblem};
use crate::primal::PrimalTrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    Builtin { name: String, d: usize },
    Inline(ProblemSpec),
}

/// Grid fields that may be overridden on top of the problem's own grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOverride {
    pub n_dates: Option<usize>,
    pub substeps: Option<usize>,
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub n_paths: usize,
    pub chunk: usize,
    /// 1-based regime whose hedging errors are reported.
    pub hedge_regime: usize,
    pub hedge_sign: HedgeSign,
    pub region_date: usize,
    pub region_states: usize,
    pub region_conditional_paths: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            n_paths: 1_638_400,
            chunk: 4096,
            hedge_regime: 1,
            hedge_sign: HedgeSign::Shortfall,
            region_date: 6,
            region_states: 200_000,
            region_conditional_paths: 1,
        }
    }
}

/// Lattice instances for `certify` when no fixture files are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySettings {
    pub instances: usize,
    pub check: CertifyConfig,
}

impl Default for CertifySettings {
    fn default() -> Self {
        CertifySettings {
            instances: 20,
            check: CertifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub grid: GridOverride,
    /// Root seed; copied into every stage by [`RunConfig::resolved`].
    pub seed: u64,
    pub dual: DualTrainConfig,
    pub primal: PrimalTrainConfig,
    pub evaluation: EvaluationConfig,
    pub certify: CertifySettings,
    pub output: PathBuf,
    /// Rayon worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::full("gbm3regime", 2)
    }
}

impl RunConfig {
    /// Full-scale settings: batch 4096, learning rate 1e-3, `1000 + 20 d`
    /// epochs, 1,638,400 evaluation paths.
    pub fn full(problem: &str, d: usize) -> Self {
        let epochs = 1000 + 20 * d;
        let baseline = if problem == "expou_jump" {
            Baseline::expou_default()
        } else {
            Baseline::linear(0.45)
        };
        RunConfig {
            problem: ProblemSource::Builtin {
                name: problem.into(),
                d,
            },
            grid: GridOverride::default(),
            seed: 0,
            dual: DualTrainConfig {
                epochs,
                batch_size: 4096,
                baseline,
                ..DualTrainConfig::default()
            },
            primal: PrimalTrainConfig {
                epochs,
                batch_size: 4096,
                ..PrimalTrainConfig::default()
            },
            evaluation: EvaluationConfig::default(),
            certify: CertifySettings::default(),
            output: PathBuf::from("out"),
            workers: None,
        }
    }

    /// Desk-scale settings, sized for a single CPU core: a tenth of the epochs
    /// at a larger step, a smaller dual batch, and 65,536 evaluation paths.
    pub fn desk_scale(problem: &str, d: usize) -> Self {
        let mut c = RunConfig::full(problem, d);
        c.dual.epochs = c.dual.epochs.div_ceil(10);
        c.dual.batch_size = 512;
        c.dual.adam = AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        };
        c.primal.epochs = c.primal.epochs.div_ceil(10);
        c.primal.adam = c.dual.adam;
        c.evaluation.n_paths = 65_536;
        c.evaluation.region_states = 20_000;
        c
    }

    /// Parses JSON, reporting schema errors with a JSON pointer to the field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(&e.path().to_string());
            Error::config(format!("config schema error at {pointer}: {}", e.inner()))
        })
    }

    /// The same config with the root seed propagated into every stage.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.dual.seed = c.seed;
        c.primal.seed = c.seed;
        c.certify.check.seed = c.seed;
        c
    }

    pub fn problem(&self) -> Result<SwitchingProblem> {
        let mut spec = match &self.problem {
            ProblemSource::Builtin { name, d } => ProblemSpec::builtin(name, *d)?,
            ProblemSource::Inline(spec) => spec.clone(),
        };
        if let Some(n) = self.grid.n_dates {
            spec.grid.n_dates = n;
        }
        if let Some(k) = self.grid.substeps {
            spec.grid.substeps = k;
        }
        if let Some(h) = self.grid.horizon {
            spec.grid.horizon = h;
        }
        SwitchingProblem::from_spec(spec)
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            n_paths: self.evaluation.n_paths,
            seed: self.seed,
            chunk: self.evaluation.chunk,
            memory_budget: self.dual.memory_budget,
        }
    }
}

/// `a.b[2].c` -> `/a/b/2/c`.
fn json_pointer(path: &str) -> String {
    if path == "." || path.is_empty() {
        return "/".into();
    }
    let mut out = String::new();
    for part in path.split('.') {
        let mut rest = part;
        while let Some(open) = rest.find('[') {
            if open > 0 {
                out.push('/');
                out.push_str(&rest[..open]);
            }
            let close = rest[open..].find(']').map_or(rest.len(), |c| open + c);
            out.push('/');
            out.push_str(&rest[open + 1..close]);
            rest = &rest[(close + 1).min(rest.len())..];
        }
        if !rest.is_empty() {
            out.push('/');
            out.push_str(rest);
        }
    }
    out
}
