use ndarray::{Array2, Axis};

use super::policy::Policy;
use super::scenario::ScenarioBatch;
use crate::error::Result;
use crate::neural::{Mode, Network};

/// One stage of the relaxed primal recursion on a fixed batch. Rows are
/// `(path, current regime)` pairs, row `r = p J + i`.
#[derive(Debug, Clone)]
pub struct PrimalStage {
    pub stage: usize,
    pub inputs: Array2<f64>,
    /// `values[r, k]`: stage payoff of choosing `k` plus the continuation.
    pub values: Array2<f64>,
    /// Row weights (path probability over `J`).
    pub weights: Vec<f64>,
    pub temperature: f64,
}

impl PrimalStage {
    /// `cont[p, k]`: value from date `s + 1` on when regime `k` runs on `[t_s, t_{s+1}]`.
    pub fn new(policy: &Policy, batch: &ScenarioBatch, s: usize, cont: &Array2<f64>, temperature: f64) -> Result<Self> {
        let j = policy.n_regimes;
        let b = batch.n_paths();
        let rows: Vec<usize> = (0..b * j).map(|r| r / j).collect();
        let current: Vec<usize> = (0..b * j).map(|r| r % j).collect();
        let states = batch.states.index_axis(Axis(1), s).select(Axis(0), &rows);
        let inputs = policy.features(batch.times[s], states.view(), &current)?;
        let t = &batch.tables;
        let values = Array2::from_shape_fn((b * j, j), |(r, k)| {
            let (p, i) = (r / j, r % j);
            t.running[[p, s, k]] - t.costs[[p, s, i, k]] + cont[[p, k]]
        });
        Ok(PrimalStage {
            stage: s,
            inputs,
            values,
            weights: (0..b * j).map(|r| batch.weight(r / j) / j as f64).collect(),
            temperature,
        })
    }

    /// Negative softmax-weighted value and its gradient with respect to the logits.
    fn objective(&self, logits: &Array2<f64>) -> (f64, Array2<f64>) {
        let tau = self.temperature;
        let j = logits.ncols();
        let mut grad = Array2::<f64>::zeros(logits.dim());
        let mut loss = 0.0;
        for (r, row) in logits.rows().into_iter().enumerate() {
            let omega = self.weights[r];
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|&l| ((l - top) / tau).exp()).collect();
            let z: f64 = e.iter().sum();
            let v = self.values.row(r);
            let expected: f64 = (0..j).map(|k| e[k] / z * v[k]).sum();
            loss -= omega * expected;
            for k in 0..j {
                grad[[r, k]] = -omega * e[k] / z * (v[k] - expected) / tau;
            }
        }
        (loss, grad)
    }

    pub fn loss(&self, net: &mut Network) -> Result<f64> {
        let logits = net.forward(self.inputs.view(), Mode::Train)?;
        Ok(self.objective(&logits).0)
    }

    pub fn loss_and_gradient(&self, net: &mut Network) -> Result<(f64, Vec<f64>)> {
        let (logits, tape) = net.forward_recorded(self.inputs.view(), Mode::Train)?;
        let (loss, grad) = self.objective(&logits);
        Ok((loss, net.backward(&tape, grad.view())?))
    }
}
