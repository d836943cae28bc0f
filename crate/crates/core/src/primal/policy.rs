use std::io::{Read, Write};

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{load_networks, save_networks, Activation, MlpSpec, Network};
use crate::rng::{derive_seed, seeded};

/// A regime-decision rule: the regime to run on `[t_n, t_{n+1}]` given the
/// state at `t_n` and the regime currently in force.
pub trait SwitchRule {
    fn n_regimes(&self) -> usize;

    /// Decisions for every row of `states` (`[path, d]`), with `current[p]`
    /// the regime of path `p`.
    fn decide(&self, n: usize, t: f64, states: ArrayView2<'_, f64>, current: &[usize]) -> Result<Vec<usize>>;
}

/// Never switches.
#[derive(Debug, Clone, Copy)]
pub struct StayRule {
    pub n_regimes: usize,
}

impl SwitchRule for StayRule {
    fn n_regimes(&self) -> usize {
        self.n_regimes
    }

    fn decide(&self, _n: usize, _t: f64, _states: ArrayView2<'_, f64>, current: &[usize]) -> Result<Vec<usize>> {
        Ok(current.to_vec())
    }
}

/// Uniformly random decisions, a deterministic function of `(seed, n, state)`.
#[derive(Debug, Clone, Copy)]
pub struct RandomRule {
    pub n_regimes: usize,
    pub seed: u64,
}

impl SwitchRule for RandomRule {
    fn n_regimes(&self) -> usize {
        self.n_regimes
    }

    fn decide(&self, n: usize, _t: f64, states: ArrayView2<'_, f64>, current: &[usize]) -> Result<Vec<usize>> {
        Ok(states
            .rows()
            .into_iter()
            .zip(current)
            .map(|(x, &c)| {
                let key = x.iter().fold(c as u64, |h, v| h.rotate_left(7) ^ v.to_bits());
                seeded(derive_seed(self.seed, "random-rule", key ^ n as u64)).gen_range(0..self.n_regimes)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArch {
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl PolicyArch {
    pub fn for_dim(dim: usize) -> Self {
        PolicyArch {
            width: 20 + dim,
            depth: 3,
            activation: Activation::Relu,
            batch_norm: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyMeta {
    dim: usize,
    n_regimes: usize,
    arch: PolicyArch,
    temperature: f64,
}

/// Per-date networks `(t_n, x, onehot(i)) -> J logits`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub dim: usize,
    pub n_regimes: usize,
    pub arch: PolicyArch,
    pub nets: Vec<Network>,
    /// Softmax temperature reached at the end of training.
    pub temperature: f64,
}

impl Policy {
    pub fn new(dim: usize, n_regimes: usize, n_dates: usize, arch: &PolicyArch, seed: u64) -> Result<Self> {
        let spec = MlpSpec {
            activation: arch.activation.clone(),
            batch_norm: arch.batch_norm,
            ..MlpSpec::new(1 + dim + n_regimes, arch.width, arch.depth, n_regimes)
        };
        let nets = (0..n_dates)
            .map(|n| Network::mlp(&spec, &mut seeded(derive_seed(seed, "policy-net", n as u64))))
            .collect::<Result<_>>()?;
        Ok(Policy {
            dim,
            n_regimes,
            arch: arch.clone(),
            nets,
            temperature: 1.0,
        })
    }

    pub fn n_dates(&self) -> usize {
        self.nets.len()
    }

    /// Network input rows `[t, x, onehot(current)]`.
    pub fn features(&self, t: f64, states: ArrayView2<'_, f64>, current: &[usize]) -> Result<Array2<f64>> {
        if states.ncols() != self.dim || states.nrows() != current.len() {
            return Err(Error::shape(format!(
                "policy expects [{} x {}] states, got {:?}",
                current.len(),
                self.dim,
                states.dim()
            )));
        }
        let mut out = Array2::zeros((states.nrows(), 1 + self.dim + self.n_regimes));
        for (p, &c) in current.iter().enumerate() {
            if c >= self.n_regimes {
                return Err(Error::shape(format!("regime {c} out of range")));
            }
            out[[p, 0]] = t;
            out.slice_mut(s![p, 1..=self.dim]).assign(&states.row(p));
            out[[p, 1 + self.dim + c]] = 1.0;
        }
        Ok(out)
    }

    pub fn save<W: Write>(&self, out: W, extra: serde_json::Value) -> Result<()> {
        let meta = PolicyMeta {
            dim: self.dim,
            n_regimes: self.n_regimes,
            arch: self.arch.clone(),
            temperature: self.temperature,
        };
        let size: usize = self.nets.iter().map(Network::size).sum();
        save_networks(
            &self.nets,
            serde_json::json!({"kind": "policy", "policy": meta, "size": size, "extra": extra}),
            out,
        )
    }

    pub fn load<R: Read>(input: R) -> Result<(Self, serde_json::Value)> {
        let (nets, metadata) = load_networks(input)?;
        if metadata["kind"] != "policy" {
            return Err(Error::config("checkpoint does not hold a policy"));
        }
        let meta: PolicyMeta = serde_json::from_value(metadata["policy"].clone())?;
        Ok((
            Policy {
                dim: meta.dim,
                n_regimes: meta.n_regimes,
                arch: meta.arch,
                nets,
                temperature: meta.temperature,
            },
            metadata["extra"].clone(),
        ))
    }
}

/// Row-wise argmax, smallest index on ties.
pub(crate) fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

impl SwitchRule for Policy {
    fn n_regimes(&self) -> usize {
        self.n_regimes
    }

    fn decide(&self, n: usize, t: f64, states: ArrayView2<'_, f64>, current: &[usize]) -> Result<Vec<usize>> {
        let net = self
            .nets
            .get(n)
            .ok_or_else(|| Error::config(format!("policy has no network for date {n}")))?;
        let logits = net.eval(self.features(t, states, current)?.view())?;
        Ok(argmax_rows(&logits))
    }
}
