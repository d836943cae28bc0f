use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{load_networks, save_networks, Activation, Layer, MlpSpec, Network};
use crate::payoff::SwitchingProblem;
use crate::rng::{derive_seed, seeded};
use crate::sim::{PathBatch, TimeGrid};

/// Architecture of the integrand networks `z_n^i : (t, x) -> R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyArch {
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    /// Extra integrand against the Poisson counts (jump models only).
    pub jump_networks: bool,
    /// Integrate jump networks against `dN - lambda dt` rather than `dN`.
    pub compensated: bool,
}

impl PenaltyArch {
    pub fn for_problem(problem: &SwitchingProblem) -> Self {
        PenaltyArch {
            width: 20 + problem.dim(),
            depth: 3,
            activation: Activation::Relu,
            batch_norm: true,
            jump_networks: problem.dynamics.has_jumps(),
            compensated: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PenaltyMeta {
    grid: TimeGrid,
    dim: usize,
    n_regimes: usize,
    arch: PenaltyArch,
    jump_intensity: Vec<f64>,
    has_jump_nets: bool,
}

/// DeepMartingale penalty: per date and regime, a Brownian integrand network
/// and optionally a jump integrand network.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPenalty {
    pub grid: TimeGrid,
    pub dim: usize,
    pub n_regimes: usize,
    pub arch: PenaltyArch,
    /// `nets[n][i]`.
    pub nets: Vec<Vec<Network>>,
    pub jump_nets: Option<Vec<Vec<Network>>>,
    pub jump_intensity: Vec<f64>,
}

impl DualPenalty {
    pub fn new(problem: &SwitchingProblem, arch: &PenaltyArch, seed: u64) -> Result<Self> {
        let d = problem.dim();
        let j = problem.n_regimes();
        let n_dates = problem.grid.n_dates;
        if arch.jump_networks && !problem.dynamics.has_jumps() {
            return Err(Error::config("jump networks requested for a model without jumps"));
        }
        let spec = MlpSpec {
            activation: arch.activation.clone(),
            batch_norm: arch.batch_norm,
            ..MlpSpec::new(1 + d, arch.width, arch.depth, d)
        };
        let build = |label: &str| -> Result<Vec<Vec<Network>>> {
            (0..n_dates)
                .map(|n| {
                    (0..j)
                        .map(|i| Network::mlp(&spec, &mut seeded(derive_seed(seed, label, (n * j + i) as u64))))
                        .collect()
                })
                .collect()
        };
        Ok(DualPenalty {
            grid: problem.grid,
            dim: d,
            n_regimes: j,
            arch: arch.clone(),
            nets: build("dual-net")?,
            jump_nets: if arch.jump_networks {
                Some(build("dual-jump-net")?)
            } else {
                None
            },
            jump_intensity: problem.dynamics.jump_intensity(),
        })
    }

    /// Penalty with every increment identically zero.
    pub fn zero(problem: &SwitchingProblem) -> Self {
        let d = problem.dim();
        let zero = Network {
            input_norm: None,
            layers: vec![Layer {
                weight: Array2::zeros((1 + d, d)),
                bias: Array1::zeros(d),
                norm: None,
                activation: Activation::Identity,
            }],
        };
        DualPenalty {
            grid: problem.grid,
            dim: d,
            n_regimes: problem.n_regimes(),
            arch: PenaltyArch {
                width: 0,
                depth: 0,
                activation: Activation::Identity,
                batch_norm: false,
                jump_networks: false,
                compensated: true,
            },
            nets: vec![vec![zero; problem.n_regimes()]; problem.grid.n_dates],
            jump_nets: None,
            jump_intensity: problem.dynamics.jump_intensity(),
        }
    }

    /// Same penalty with batch norm folded into the affine maps.
    pub fn folded(&self) -> Self {
        let fold = |nets: &Vec<Vec<Network>>| -> Vec<Vec<Network>> {
            nets.iter().map(|row| row.iter().map(Network::folded).collect()).collect()
        };
        DualPenalty {
            nets: fold(&self.nets),
            jump_nets: self.jump_nets.as_ref().map(fold),
            ..self.clone()
        }
    }

    pub fn size(&self) -> usize {
        let count = |nets: &Vec<Vec<Network>>| nets.iter().flatten().map(Network::size).sum::<usize>();
        count(&self.nets) + self.jump_nets.as_ref().map_or(0, count)
    }

    pub(crate) fn check_paths(&self, paths: &PathBatch, n: usize) -> Result<()> {
        if paths.grid != self.grid {
            return Err(Error::config("penalty and paths live on different grids"));
        }
        if paths.dim() != self.dim {
            return Err(Error::shape(format!("paths have dimension {}, penalty {}", paths.dim(), self.dim)));
        }
        if n < paths.first_date || n >= self.grid.n_dates {
            return Err(Error::config(format!(
                "stage {n} outside {}..{}",
                paths.first_date, self.grid.n_dates
            )));
        }
        if self.jump_nets.is_some() && paths.dn.is_none() {
            return Err(Error::config("jump networks need paths with Poisson counts"));
        }
        Ok(())
    }

    /// Network inputs `[t_k, X_{t_k}]` for interval `n`; row `p K + k`.
    pub fn stage_inputs(&self, paths: &PathBatch, n: usize) -> Array2<f64> {
        let k_sub = self.grid.substeps;
        let from = paths.local_step(n, 0);
        let (b, d) = (paths.n_paths(), self.dim);
        let times: Vec<f64> = (0..k_sub).map(|k| self.grid.sub_time(n, k)).collect();
        let mut data = Vec::with_capacity(b * k_sub * (1 + d));
        for p in 0..b {
            let lane = paths.states.slice(s![p, from..from + k_sub, ..]);
            for (row, &t) in lane.rows().into_iter().zip(&times) {
                data.push(t);
                data.extend(row.iter());
            }
        }
        Array2::from_shape_vec((b * k_sub, 1 + d), data).expect("shape")
    }

    /// Integrator increments for interval `n`, `[path, K, d]`: Brownian and,
    /// when jump networks are present, the (compensated) Poisson counts.
    pub fn stage_noise(&self, paths: &PathBatch, n: usize) -> (Array3<f64>, Option<Array3<f64>>) {
        let from = paths.local_step(n, 0);
        let to = from + self.grid.substeps;
        let dw = paths.dw.slice(s![.., from..to, ..]).to_owned();
        let dn = match (&self.jump_nets, &paths.dn) {
            (Some(_), Some(dn)) => {
                let mut c = dn.slice(s![.., from..to, ..]).to_owned();
                if self.arch.compensated {
                    let dt = self.grid.dt();
                    for mut lane in c.lanes_mut(Axis(2)) {
                        lane.iter_mut()
                            .zip(&self.jump_intensity)
                            .for_each(|(v, l)| *v -= l * dt);
                    }
                }
                Some(c)
            }
            _ => None,
        };
        (dw, dn)
    }

    pub fn save<W: Write>(&self, out: W, extra: serde_json::Value) -> Result<()> {
        let meta = PenaltyMeta {
            grid: self.grid,
            dim: self.dim,
            n_regimes: self.n_regimes,
            arch: self.arch.clone(),
            jump_intensity: self.jump_intensity.clone(),
            has_jump_nets: self.jump_nets.is_some(),
        };
        let mut nets: Vec<Network> = self.nets.iter().flatten().cloned().collect();
        if let Some(jn) = &self.jump_nets {
            nets.extend(jn.iter().flatten().cloned());
        }
        let metadata = serde_json::json!({
            "kind": "dual_penalty",
            "penalty": meta,
            "size": self.size(),
            "extra": extra,
        });
        save_networks(&nets, metadata, out)
    }

    pub fn load<R: Read>(input: R) -> Result<(Self, serde_json::Value)> {
        let (nets, metadata) = load_networks(input)?;
        if metadata["kind"] != "dual_penalty" {
            return Err(Error::config("checkpoint does not hold a dual penalty"));
        }
        let meta: PenaltyMeta = serde_json::from_value(metadata["penalty"].clone())?;
        let per = meta.grid.n_dates * meta.n_regimes;
        let expected = per * if meta.has_jump_nets { 2 } else { 1 };
        if nets.len() != expected {
            return Err(Error::shape(format!("checkpoint holds {} networks, expected {expected}", nets.len())));
        }
        let mut it = nets.into_iter();
        let grid_of = |it: &mut dyn Iterator<Item = Network>| -> Vec<Vec<Network>> {
            (0..meta.grid.n_dates)
                .map(|_| it.take(meta.n_regimes).collect())
                .collect()
        };
        let main = grid_of(&mut it);
        let jump = meta.has_jump_nets.then(|| grid_of(&mut it));
        let penalty = DualPenalty {
            grid: meta.grid,
            dim: meta.dim,
            n_regimes: meta.n_regimes,
            arch: meta.arch,
            nets: main,
            jump_nets: jump,
            jump_intensity: meta.jump_intensity,
        };
        Ok((penalty, metadata["extra"].clone()))
    }
}

/// `xi[p] = sum_k z[p K + k] . noise[p, k]`.
pub(crate) fn contract(z: &Array2<f64>, noise: ArrayView3<'_, f64>) -> Array1<f64> {
    let (b, k_sub, d) = noise.dim();
    let z = z.as_standard_layout();
    let noise = noise.as_standard_layout();
    let (zs, ns) = (z.as_slice().expect("contiguous"), noise.as_slice().expect("contiguous"));
    let span = k_sub * d;
    Array1::from_iter(
        zs.chunks_exact(span)
            .zip(ns.chunks_exact(span))
            .map(|(zp, np)| zp.iter().zip(np).map(|(a, b)| a * b).sum::<f64>()),
    )
    .into_shape_with_order(b)
    .expect("shape")
}

/// Cotangent of `z` given `d loss / d xi`: row `p K + k` is `g[p] * noise[p, k]`.
pub(crate) fn spread(g: &Array1<f64>, noise: ArrayView3<'_, f64>) -> Array2<f64> {
    let (b, k_sub, d) = noise.dim();
    let noise = noise.as_standard_layout();
    let ns = noise.as_slice().expect("contiguous");
    let span = k_sub * d;
    let mut data = vec![0.0; b * span];
    for ((out, np), &gp) in data.chunks_exact_mut(span).zip(ns.chunks_exact(span)).zip(g) {
        if gp != 0.0 {
            out.iter_mut().zip(np).for_each(|(o, &v)| *o = gp * v);
        }
    }
    Array2::from_shape_vec((b * k_sub, d), data).expect("shape")
}

/// Increments `xi_n^i` for all regimes, `[path, i]`, with eval-mode networks.
pub fn martingale_increments(penalty: &DualPenalty, paths: &PathBatch, n: usize) -> Result<Array2<f64>> {
    penalty.check_paths(paths, n)?;
    let inputs = penalty.stage_inputs(paths, n);
    let (dw, dn) = penalty.stage_noise(paths, n);
    let mut out = Array2::zeros((paths.n_paths(), penalty.n_regimes));
    for i in 0..penalty.n_regimes {
        let z = penalty.nets[n][i].eval(inputs.view())?;
        let mut xi = contract(&z, dw.view());
        if let (Some(jn), Some(dn)) = (&penalty.jump_nets, &dn) {
            let zp = jn[n][i].eval(inputs.view())?;
            xi += &contract(&zp, dn.view());
        }
        out.column_mut(i).assign(&xi);
    }
    Ok(out)
}

/// Increments for every stage of the batch, `[path, stage, i]`.
pub fn all_increments(penalty: &DualPenalty, paths: &PathBatch) -> Result<Array3<f64>> {
    let stages = penalty.grid.n_dates - paths.first_date;
    let mut out = Array3::zeros((paths.n_paths(), stages, penalty.n_regimes));
    for s in 0..stages {
        let xi = martingale_increments(penalty, paths, paths.first_date + s)?;
        out.index_axis_mut(Axis(1), s).assign(&xi);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, SimOptions};

    fn small_problem() -> SwitchingProblem {
        let p = SwitchingProblem::gbm_three_regime(2).unwrap();
        p.with_grid(TimeGrid::new(1.0, 4, 5).unwrap()).unwrap()
    }

    #[test]
    fn zero_penalty_gives_zero_increments() {
        let p = small_problem();
        let paths = simulate(&p.dynamics, &p.grid, 7, 1, &SimOptions::default()).unwrap();
        let xi = all_increments(&DualPenalty::zero(&p), &paths).unwrap();
        assert!(xi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_integrand_telescopes() {
        let p = small_problem();
        let mut pen = DualPenalty::zero(&p);
        let c = [0.7, -1.3];
        for row in &mut pen.nets {
            for net in row {
                net.layers[0].bias.assign(&Array1::from(c.to_vec()));
            }
        }
        let paths = simulate(&p.dynamics, &p.grid, 5, 2, &SimOptions::default()).unwrap();
        for n in 0..4 {
            let xi = martingale_increments(&pen, &paths, n).unwrap();
            let w = paths.interval_dw(n);
            for q in 0..5 {
                let want = c[0] * w[[q, 0]] + c[1] * w[[q, 1]];
                for i in 0..3 {
                    assert!((xi[[q, i]] - want).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = SwitchingProblem::expou_jump(2).unwrap();
        let pen = DualPenalty::new(&p, &PenaltyArch::for_problem(&p), 3).unwrap();
        assert!(pen.jump_nets.is_some());
        let mut buf = Vec::new();
        pen.save(&mut buf, serde_json::json!({"epochs": 0})).unwrap();
        let (back, extra) = DualPenalty::load(buf.as_slice()).unwrap();
        assert_eq!(back, pen);
        assert_eq!(extra["epochs"], 0);
    }

    #[test]
    fn folded_penalty_matches() {
        let p = small_problem();
        let pen = DualPenalty::new(&p, &PenaltyArch::for_problem(&p), 5).unwrap();
        let paths = simulate(&p.dynamics, &p.grid, 9, 4, &SimOptions::default()).unwrap();
        let a = all_increments(&pen, &paths).unwrap();
        let b = all_increments(&pen.folded(), &paths).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn mismatched_paths_are_rejected() {
        let p = small_problem();
        let pen = DualPenalty::zero(&p);
        let other = SwitchingProblem::gbm_three_regime(2).unwrap();
        let paths = simulate(&other.dynamics, &other.grid, 2, 0, &SimOptions::default()).unwrap();
        assert!(martingale_increments(&pen, &paths, 0).is_err());
        let ok = simulate(&p.dynamics, &p.grid, 2, 0, &SimOptions::default()).unwrap();
        assert!(martingale_increments(&pen, &ok, 4).is_err());
    }
}
