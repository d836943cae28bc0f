use ndarray::{ArrayView2};
use serde::Serialize;

use super::problem::SwitchingProblem;

/// Outcome of the strict triangular check `l_ij + l_jk > l_ik`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TriangularStatus {
    /// Every sampled triple has positive slack (vacuous for `J = 1`).
    Strict,
    /// No violation, but some triples hold with equality.
    Binding,
    Violated,
}

#[derive(Debug, Clone, Serialize)]
pub struct TriangularReport {
    pub status: TriangularStatus,
    /// Smallest `l_ij + l_jk - l_ik` seen (`+inf` when there are no triples).
    pub min_slack: f64,
    /// Largest `l_ik - l_ij - l_jk` seen.
    pub max_violation: f64,
    /// 1-based triples `(i, j, k)` that hold with equality somewhere.
    pub binding: Vec<(usize, usize, usize)>,
    /// 1-based triples that are violated somewhere.
    pub violating: Vec<(usize, usize, usize)>,
    pub samples: usize,
}

impl TriangularReport {
    pub fn passes(&self) -> bool {
        self.status == TriangularStatus::Strict
    }
}

const EQUALITY_TOL: f64 = 1e-12;

/// Accumulates triangular slack over cost matrices.
#[derive(Debug)]
pub(crate) struct TriangularScan {
    j: usize,
    min_slack: f64,
    triple_min: Vec<f64>,
    samples: usize,
}

impl TriangularScan {
    pub(crate) fn new(j: usize) -> Self {
        TriangularScan {
            j,
            min_slack: f64::INFINITY,
            triple_min: vec![f64::INFINITY; j * j * j],
            samples: 0,
        }
    }

    pub(crate) fn add(&mut self, cost: impl Fn(usize, usize) -> f64) {
        self.samples += 1;
        let j = self.j;
        for a in 0..j {
            for b in 0..j {
                if a == b {
                    continue;
                }
                for c in 0..j {
                    if b == c {
                        continue;
                    }
                    let slack = cost(a, b) + cost(b, c) - cost(a, c);
                    let idx = (a * j + b) * j + c;
                    self.triple_min[idx] = self.triple_min[idx].min(slack);
                    self.min_slack = self.min_slack.min(slack);
                }
            }
        }
    }

    pub(crate) fn finish(self) -> TriangularReport {
        let j = self.j;
        let mut binding = Vec::new();
        let mut violating = Vec::new();
        for a in 0..j {
            for b in 0..j {
                for c in 0..j {
                    let s = self.triple_min[(a * j + b) * j + c];
                    if !s.is_finite() {
                        continue;
                    }
                    if s < -EQUALITY_TOL {
                        violating.push((a + 1, b + 1, c + 1));
                    } else if s <= EQUALITY_TOL {
                        binding.push((a + 1, b + 1, c + 1));
                    }
                }
            }
        }
        let status = if !violating.is_empty() {
            TriangularStatus::Violated
        } else if !binding.is_empty() {
            TriangularStatus::Binding
        } else {
            TriangularStatus::Strict
        };
        TriangularReport {
            status,
            min_slack: self.min_slack,
            max_violation: -self.min_slack,
            binding,
            violating,
            samples: self.samples,
        }
    }
}

/// Checks the strict triangular condition at `sample_states` for every date in
/// `dates` (intervention date indices).
pub fn validate_triangular(
    problem: &SwitchingProblem,
    sample_states: ArrayView2<'_, f64>,
    dates: &[usize],
) -> TriangularReport {
    let mut scan = TriangularScan::new(problem.n_regimes());
    for &n in dates {
        let t = problem.grid.date_time(n);
        for x in sample_states.rows() {
            let x = x.to_vec();
            scan.add(|a, b| if a == b { 0.0 } else { problem.cost(a, b, t, &x) });
        }
    }
    scan.finish()
}
