use ndarray::{Array2, Axis};
use serde::Serialize;

use super::lattice::LatticeModel;
use crate::error::{Error, Result};

/// Rule count above which [`brute_force_value`] refuses to enumerate.
pub const BRUTE_FORCE_CAP: f64 = 1e7;

/// Backward dynamic-programming solution on a lattice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactSolution {
    /// `values[n]`: `[b^n, J]`, `n = 0..=N`.
    pub values: Vec<Array2<f64>>,
    /// `continuation[n][k, j] = E[F^j + Y_{n+1}^j | node k]`, `n < N`.
    pub continuation: Vec<Array2<f64>>,
    /// `greedy[n][k, i] = argmax_j (continuation_j - l_ij)`, ties to the smallest `j`.
    pub greedy: Vec<Array2<usize>>,
}

pub fn exact_value(model: &LatticeModel) -> ExactSolution {
    let (b, n, j) = (model.branching, model.n_dates, model.n_regimes);
    let mut values = vec![Array2::zeros((0, j)); n + 1];
    values[n] = Array2::from_shape_fn((model.n_leaves(), j), |(q, r)| model.terminal[q][r]);
    let mut continuation = vec![Array2::zeros((0, j)); n];
    let mut greedy = vec![Array2::zeros((0, j)); n];
    for level in (0..n).rev() {
        let size = model.level_size(level);
        let next = &values[level + 1];
        let cont = Array2::from_shape_fn((size, j), |(k, r)| {
            (0..b)
                .map(|c| {
                    let child = k * b + c;
                    model.probs[level][k][c] * (model.running[level][child][r] + next[[child, r]])
                })
                .sum::<f64>()
        });
        let mut val = Array2::zeros((size, j));
        let mut arg = Array2::zeros((size, j));
        for k in 0..size {
            for i in 0..j {
                let mut best = (0, f64::NEG_INFINITY);
                for r in 0..j {
                    let v = cont[[k, r]] - model.costs[level][k][i][r];
                    if v > best.1 {
                        best = (r, v);
                    }
                }
                arg[[k, i]] = best.0;
                val[[k, i]] = best.1;
            }
        }
        values[level] = val;
        continuation[level] = cont;
        greedy[level] = arg;
    }
    ExactSolution {
        values,
        continuation,
        greedy,
    }
}

/// Best value from every depth-`level` node, starting in `regime`, by enumerating
/// every adapted decision rule (one regime per node of the subtree).
pub fn brute_force_value(model: &LatticeModel, level: usize, regime: usize) -> Result<Vec<f64>> {
    let (b, n, j) = (model.branching, model.n_dates, model.n_regimes);
    if level > n || regime >= j {
        return Err(Error::config(format!("no depth {level} / regime {} in this lattice", regime + 1)));
    }
    let roots = model.level_size(level);
    if level == n {
        return Ok(model.terminal.iter().map(|t| t[regime]).collect());
    }
    // decision nodes of one subtree, depth by depth
    let sizes: Vec<usize> = (0..n - level).map(|m| b.pow(m as u32)).collect();
    let nodes: usize = sizes.iter().sum();
    let count = roots as f64 * (j as f64).powi(nodes as i32);
    if count > BRUTE_FORCE_CAP {
        return Err(Error::TooLarge {
            count,
            cap: BRUTE_FORCE_CAP,
        });
    }
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let mut out = Vec::with_capacity(roots);
    for root in 0..roots {
        let mut rule = vec![0usize; nodes];
        let mut best = f64::NEG_INFINITY;
        loop {
            best = best.max(rule_value(model, level, root, regime, &rule, &offsets));
            // mixed-radix increment
            let mut pos = 0;
            while pos < nodes {
                rule[pos] += 1;
                if rule[pos] < j {
                    break;
                }
                rule[pos] = 0;
                pos += 1;
            }
            if pos == nodes {
                break;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Expected payoff of following `rule` from `(level, root)` in regime `start`.
fn rule_value(model: &LatticeModel, level: usize, root: usize, start: usize, rule: &[usize], offsets: &[usize]) -> f64 {
    let b = model.branching;
    // (depth, node, local index, current regime, probability, accumulated payoff)
    let mut stack = vec![(level, root, 0usize, start, 1.0, 0.0)];
    let mut total = 0.0;
    while let Some((m, k, local, cur, prob, acc)) = stack.pop() {
        if m == model.n_dates {
            total += prob * (acc + model.terminal[k][cur]);
            continue;
        }
        let d = rule[offsets[m - level] + local];
        let acc = acc - model.costs[m][k][cur][d];
        for c in 0..b {
            let child = k * b + c;
            stack.push((
                m + 1,
                child,
                local * b + c,
                d,
                prob * model.probs[m][k][c],
                acc + model.running[m][child][d],
            ));
        }
    }
    total
}

/// Doob increments of the reward-augmented value: on the edge into `child`,
/// `F^j + Y_{n+1}^j(child) - E_n[F^j + Y_{n+1}^j]`. Returned per depth as
/// `[b^{n+1}, J]`.
pub fn doob_martingale(model: &LatticeModel, solution: &ExactSolution) -> Vec<Array2<f64>> {
    let b = model.branching;
    (0..model.n_dates)
        .map(|level| {
            let next = &solution.values[level + 1];
            let cont = &solution.continuation[level];
            Array2::from_shape_fn((model.level_size(level + 1), model.n_regimes), |(child, r)| {
                model.running[level][child][r] + next[[child, r]] - cont[[child / b, r]]
            })
        })
        .collect()
}

/// Largest `|E_n[increment]|` over nodes and regimes.
pub fn max_conditional_mean(model: &LatticeModel, increments: &[Array2<f64>]) -> f64 {
    let b = model.branching;
    let mut worst: f64 = 0.0;
    for (level, inc) in increments.iter().enumerate() {
        for (k, probs) in model.probs[level].iter().enumerate() {
            for r in 0..model.n_regimes {
                let m: f64 = (0..b).map(|c| probs[c] * inc[[k * b + c, r]]).sum();
                worst = worst.max(m.abs());
            }
        }
    }
    worst
}

/// Values at the root, `[J]`.
pub fn root_values(solution: &ExactSolution) -> Vec<f64> {
    solution.values[0].index_axis(Axis(0), 0).to_vec()
}
