use std::io::Write;

use serde::{Deserialize, Serialize};

use super::bounds::{csv_err, EvalOptions};
use crate::dual::{all_increments, dual_backward, DualPenalty};
use crate::error::{Error, Result};
use crate::payoff::{evaluate_payoffs, SwitchingProblem};
use crate::sim::simulate;
use crate::stats::{mean_se, quantile_sorted};

/// Fewest samples for which tail risk metrics are reported.
pub const MIN_RISK_SAMPLES: usize = 1000;

/// Which tail of the hedging error counts as risk.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HedgeSign {
    /// `H = U_0^i - UB_i`: the adversarial payoff exceeding the hedge.
    #[default]
    Shortfall,
    /// `-H`.
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskMetrics {
    pub var95: f64,
    pub cvar95: f64,
    pub var99: f64,
    pub cvar99: f64,
}

/// VaR (type-7 quantile) and CVaR (mean of the samples at or above VaR).
pub fn risk_metrics(samples: &[f64]) -> Result<RiskMetrics> {
    if samples.len() < MIN_RISK_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: samples.len(),
            required: MIN_RISK_SAMPLES,
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::config("hedging errors contain non-finite samples"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = |alpha: f64| {
        let var = quantile_sorted(&sorted, alpha);
        let start = sorted.partition_point(|&x| x < var);
        let cvar = sorted[start..].iter().sum::<f64>() / (sorted.len() - start) as f64;
        (var, cvar.max(var))
    };
    let (var95, cvar95) = tail(0.95);
    let (var99, cvar99) = tail(0.99);
    Ok(RiskMetrics {
        var95,
        cvar95,
        var99,
        cvar99,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(samples: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if samples.is_empty() || !(hi > lo) {
            let c = if samples.is_empty() { 0.0 } else { lo };
            return Histogram {
                edges: vec![c, c],
                counts: vec![samples.len()],
            };
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0; bins];
        for &x in samples {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Histogram {
            edges: (0..=bins).map(|k| lo + width * k as f64).collect(),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HedgeReport {
    /// 1-based.
    pub regime: usize,
    pub n_samples: usize,
    /// `UB_i`, the sample mean the errors are centered at.
    pub price: f64,
    pub price_se: f64,
    pub sign: HedgeSign,
    pub metrics: RiskMetrics,
    pub histogram: Histogram,
    pub definition: &'static str,
}

pub const HEDGE_DEFINITION: &str =
    "H = U_0^i(M) - UB_i per path: pathwise regime maximum of the penalized payoff minus the bound estimate";

/// Risk report for pathwise values `u` of `U_0^i`.
pub fn hedge_report_from_samples(u: &[f64], regime: usize, sign: HedgeSign, bins: usize) -> Result<HedgeReport> {
    let (price, price_se) = mean_se(u);
    let h: Vec<f64> = u
        .iter()
        .map(|&x| match sign {
            HedgeSign::Shortfall => x - price,
            HedgeSign::Loss => price - x,
        })
        .collect();
    let metrics = risk_metrics(&h)?;
    Ok(HedgeReport {
        regime: regime + 1,
        n_samples: h.len(),
        price,
        price_se,
        sign,
        metrics,
        histogram: Histogram::new(&h, bins),
        definition: HEDGE_DEFINITION,
    })
}

/// Hedging-error distribution of regime `regime` (0-based) under `penalty` on
/// fresh paths.
pub fn hedging_errors(
    problem: &SwitchingProblem,
    penalty: &DualPenalty,
    regime: usize,
    options: &EvalOptions,
    sign: HedgeSign,
) -> Result<HedgeReport> {
    if regime >= problem.n_regimes() {
        return Err(Error::config(format!("regime {} out of range", regime + 1)));
    }
    if options.n_paths < MIN_RISK_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: options.n_paths,
            required: MIN_RISK_SAMPLES,
        });
    }
    let penalty = penalty.folded();
    let mut u = Vec::with_capacity(options.n_paths);
    for (offset, size) in options.chunks() {
        let paths = simulate(&problem.dynamics, &problem.grid, size, options.stream(), &options.sim(offset))?;
        let tables = evaluate_payoffs(problem, &paths)?;
        let v = dual_backward(&tables, &all_increments(&penalty, &paths)?)?;
        u.extend(v.stage(0).column(regime).iter().copied());
    }
    hedge_report_from_samples(&u, regime, sign, 50)
}

/// Histogram CSV: `bin_lo, bin_hi, count`.
pub fn write_hedge_csv<W: Write>(report: &HedgeReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_lo", "bin_hi", "count"]).map_err(csv_err)?;
    for (k, c) in report.histogram.counts.iter().enumerate() {
        w.write_record([
            report.histogram.edges[k].to_string(),
            report.histogram.edges[k + 1].to_string(),
            c.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
