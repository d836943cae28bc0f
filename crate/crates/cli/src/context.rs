use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use deepswitch::config::{ProblemSource, RunConfig};
use deepswitch::dual::{DualLoss, DualPenalty};
use deepswitch::primal::Policy;
use deepswitch::SwitchingProblem;
use serde_json::{json, Value};

use crate::{Common, LossArg};

pub const GIT_DESCRIBE: &str = env!("DEEPSWITCH_GIT_DESCRIBE");

/// Resolved configuration plus everything a subcommand needs to write artifacts.
pub struct Context {
    pub config: RunConfig,
    pub desk_scale: bool,
    pub command: &'static str,
}

impl Context {
    pub fn new(flags: &Common, command: &'static str) -> Result<Self> {
        let mut config = match &flags.config {
            Some(path) => {
                if flags.desk_scale {
                    bail!("--desk-scale selects a preset and cannot be combined with --config");
                }
                let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                RunConfig::from_json(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => {
                let name = flags.problem.as_deref().unwrap_or("gbm3regime");
                let d = flags.d.unwrap_or(2);
                if flags.desk_scale {
                    RunConfig::desk_scale(name, d)
                } else {
                    RunConfig::full(name, d)
                }
            }
        };
        if flags.config.is_some() && (flags.d.is_some() || flags.problem.is_some()) {
            match &mut config.problem {
                ProblemSource::Builtin { name, d } => {
                    if let Some(v) = flags.d {
                        *d = v;
                    }
                    if let Some(p) = &flags.problem {
                        *name = p.clone();
                    }
                }
                ProblemSource::Inline(_) => bail!("--d and --problem only apply to built-in problems"),
            }
        }
        if let Some(s) = flags.seed {
            config.seed = s;
        }
        if let Some(o) = &flags.out {
            config.output = o.clone();
        }
        if let Some(w) = flags.workers {
            config.workers = Some(w);
        }
        if let Some(l) = flags.loss {
            config.dual.loss = match l {
                LossArg::D1 => DualLoss::Upper,
                LossArg::D2 => DualLoss::L2,
            };
        }
        let config = config.resolved();
        if let Some(w) = config.workers {
            // a second build in the same process is harmless; keep the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
        }
        fs::create_dir_all(&config.output)
            .with_context(|| format!("creating output directory {}", config.output.display()))?;
        Ok(Context {
            config,
            desk_scale: flags.desk_scale,
            command,
        })
    }

    pub fn problem(&self) -> Result<SwitchingProblem> {
        Ok(self.config.problem()?)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.config.output.join(name)
    }

    /// Provenance block embedded in every artifact.
    pub fn provenance(&self) -> Value {
        json!({
            "command": self.command,
            "git_describe": GIT_DESCRIBE,
            "config": self.config,
        })
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(BufWriter::new(f))
    }

    /// Writes `report.json`: provenance, `passed` and the command's own fields.
    pub fn write_report(&self, passed: bool, body: Value) -> Result<()> {
        let mut report = self.provenance();
        report["passed"] = json!(passed);
        report["result"] = body;
        let mut w = self.create("report.json")?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load_penalty(&self, explicit: Option<PathBuf>) -> Result<DualPenalty> {
        let path = explicit.unwrap_or_else(|| self.path(DUAL_CHECKPOINT));
        let (p, _) = DualPenalty::load(open_checkpoint(&path)?)
            .with_context(|| format!("loading dual checkpoint {}", path.display()))?;
        Ok(p)
    }

    pub fn load_policy(&self, explicit: Option<PathBuf>) -> Result<Policy> {
        let path = explicit.unwrap_or_else(|| self.path(POLICY_CHECKPOINT));
        let (p, _) = Policy::load(open_checkpoint(&path)?)
            .with_context(|| format!("loading policy checkpoint {}", path.display()))?;
        Ok(p)
    }
}

pub const DUAL_CHECKPOINT: &str = "dual.ckpt";
pub const POLICY_CHECKPOINT: &str = "policy.ckpt";

fn open_checkpoint(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        bail!("checkpoint not found: {} (run the training subcommand first or pass its path)", path.display());
    }
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}
