use ndarray::{Array1, Array2, Array3};

use super::penalty::{contract, spread, DualPenalty};
use super::recursion::{dual_step, loss_l2, loss_upper};
use crate::error::Result;
use crate::neural::{Mode, Tape};
use crate::payoff::PayoffTables;
use crate::sim::PathBatch;

/// One stage of the dual backward sweep on a fixed batch: everything the
/// stage-`n` loss depends on except the stage-`n` network parameters.
#[derive(Debug, Clone)]
pub struct DualStage<'a> {
    pub tables: &'a PayoffTables,
    pub n: usize,
    pub inputs: Array2<f64>,
    pub dw: Array3<f64>,
    pub dn: Option<Array3<f64>>,
    /// `U_{n+1}`, `[path, J]`.
    pub next: &'a Array2<f64>,
    /// Baseline for the L2 loss; `None` selects the D1 mean.
    pub eta: Option<Array1<f64>>,
    /// Regimes whose losses are averaged.
    pub regimes: Vec<usize>,
}

/// Loss plus parameter gradients, one entry per regime network.
#[derive(Debug, Clone)]
pub struct StageGradients {
    pub loss: f64,
    pub nets: Vec<Vec<f64>>,
    pub jump_nets: Option<Vec<Vec<f64>>>,
}

impl<'a> DualStage<'a> {
    pub fn new(
        penalty: &DualPenalty,
        paths: &PathBatch,
        tables: &'a PayoffTables,
        n: usize,
        next: &'a Array2<f64>,
        eta: Option<Array1<f64>>,
        regimes: Vec<usize>,
    ) -> Self {
        let (dw, dn) = penalty.stage_noise(paths, n);
        DualStage {
            tables,
            n,
            inputs: penalty.stage_inputs(paths, n),
            dw,
            dn,
            next,
            eta,
            regimes,
        }
    }

    /// Increments `xi[p, i]` with batch statistics (training mode).
    pub fn increments(&self, penalty: &mut DualPenalty) -> Result<Array2<f64>> {
        let j = penalty.n_regimes;
        let mut xi = Array2::zeros((self.inputs.nrows() / self.dw.dim().1, j));
        for i in 0..j {
            let z = penalty.nets[self.n][i].forward(self.inputs.view(), Mode::Train)?;
            let mut col = contract(&z, self.dw.view());
            if let (Some(jn), Some(dn)) = (&mut penalty.jump_nets, &self.dn) {
                let zp = jn[self.n][i].forward(self.inputs.view(), Mode::Train)?;
                col += &contract(&zp, dn.view());
            }
            xi.column_mut(i).assign(&col);
        }
        Ok(xi)
    }

    /// `U_n` given the stage-`n` increments.
    pub fn values(&self, xi: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(dual_step(self.tables, self.n - self.tables.first_date, xi.view(), self.next.view())?.0)
    }

    pub fn loss(&self, penalty: &mut DualPenalty) -> Result<f64> {
        let xi = self.increments(penalty)?;
        let values = self.values(&xi)?;
        Ok(self.objective(&values).0)
    }

    /// Loss and `d loss / d U_n`.
    fn objective(&self, values: &Array2<f64>) -> (f64, Array2<f64>) {
        let b = values.nrows();
        let w = 1.0 / self.regimes.len() as f64;
        let mut loss = 0.0;
        let mut du = Array2::zeros(values.dim());
        for &i in &self.regimes {
            match &self.eta {
                Some(eta) => {
                    loss += w * loss_l2(values.view(), i, eta.view());
                    for p in 0..b {
                        du[[p, i]] += w * 2.0 * (values[[p, i]] - eta[p]) / b as f64;
                    }
                }
                None => {
                    loss += w * loss_upper(values.view(), i);
                    du.column_mut(i).mapv_inplace(|v| v + w / b as f64);
                }
            }
        }
        (loss, du)
    }

    pub fn loss_and_gradients(&self, penalty: &mut DualPenalty) -> Result<StageGradients> {
        let j = penalty.n_regimes;
        let n = self.n;
        let mut tapes: Vec<Tape> = Vec::with_capacity(j);
        let mut jump_tapes: Vec<Tape> = Vec::new();
        let b = self.inputs.nrows() / self.dw.dim().1;
        let mut xi = Array2::zeros((b, j));
        for i in 0..j {
            let (z, tape) = penalty.nets[n][i].forward_recorded(self.inputs.view(), Mode::Train)?;
            let mut col = contract(&z, self.dw.view());
            tapes.push(tape);
            if let (Some(jn), Some(dn)) = (&mut penalty.jump_nets, &self.dn) {
                let (zp, tape) = jn[n][i].forward_recorded(self.inputs.view(), Mode::Train)?;
                col += &contract(&zp, dn.view());
                jump_tapes.push(tape);
            }
            xi.column_mut(i).assign(&col);
        }
        let (values, argmax) = dual_step(self.tables, n - self.tables.first_date, xi.view(), self.next.view())?;
        let (loss, du) = self.objective(&values);

        // U^i = F - l + U_{n+1} - xi at the maximising regime
        let mut d_xi = Array2::<f64>::zeros((b, j));
        for p in 0..b {
            for i in 0..j {
                if du[[p, i]] != 0.0 {
                    d_xi[[p, argmax[[p, i]]]] -= du[[p, i]];
                }
            }
        }
        let mut nets = Vec::with_capacity(j);
        let mut jump = self.dn.as_ref().map(|_| Vec::with_capacity(j));
        for i in 0..j {
            let g = d_xi.column(i).to_owned();
            nets.push(penalty.nets[n][i].backward(&tapes[i], spread(&g, self.dw.view()).view())?);
            if let (Some(jn), Some(dn), Some(out)) = (&penalty.jump_nets, &self.dn, &mut jump) {
                out.push(jn[n][i].backward(&jump_tapes[i], spread(&g, dn.view()).view())?);
            }
        }
        Ok(StageGradients {
            loss,
            nets,
            jump_nets: jump,
        })
    }
}
