//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Reference numbers are written out here rather than taken from the library
//! so that a wrong constant in the crate cannot grade itself.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use deepswitch::config::RunConfig;
use deepswitch::dual::{
    all_increments, dual_backward, train_dual, Baseline, DualLoss, DualPenalty, DualStage, DualTrainConfig,
    PenaltyArch,
};
use deepswitch::error::Error;
use deepswitch::eval::{estimate_bounds, hedge_report_from_samples, hedging_errors, EvalOptions, HedgeSign};
use deepswitch::neural::{max_network, AdamConfig, MlpSpec, Network};
use deepswitch::oracle::{
    brute_force_value, certify, doob_martingale, exact_value, CertifyConfig, LatticeModel, RandomLattice,
};
use deepswitch::payoff::{evaluate_payoffs, ProblemSpec, SwitchingProblem};
use deepswitch::primal::{train_policy, Policy, PolicyArch, PrimalStage, PrimalTrainConfig, ScenarioBatch};
use deepswitch::rng::{derive_seed, seeded};
use deepswitch::sim::{simulate, SimOptions, TimeGrid};
use ndarray::Array2;
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test -- --list` and friends probe test binaries; answer without running anything
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());

    let mut desk: Option<(SwitchingProblem, DualPenalty)> = None;
    let mut all = true;
    let criteria: [(usize, &str, Option<Duration>); 8] = [
        (1, "oracle certification suite", Some(Duration::from_secs(60))),
        (2, "gradient correctness", Some(Duration::from_secs(60))),
        (3, "max-network construction", Some(Duration::from_secs(30))),
        (4, "single-regime sanity", None),
        (5, "desk-scale bounds table row", None),
        (6, "hedging metrics", None),
        (7, "error propagation on Monte Carlo paths", Some(Duration::from_secs(60))),
        (8, "jump-model smoke test", None),
    ];
    for (id, name, limit) in criteria {
        if only.is_some_and(|k| k != id) {
            continue;
        }
        let start = Instant::now();
        let result = match id {
            1 => oracle_suite(),
            2 => gradients(),
            3 => max_networks(),
            4 => single_regime(),
            5 => {
                let (o, trained) = desk_table();
                desk = trained;
                o
            }
            6 => hedging(desk.as_ref()),
            7 => error_propagation(),
            _ => jump_smoke(),
        };
        let elapsed = start.elapsed();
        let mut o = result.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        if let Some(limit) = limit {
            if elapsed > limit {
                o.passed = false;
                o.detail.push_str(&format!("; runtime {elapsed:.1?} over the {limit:?} budget"));
            }
        }
        println!(
            "{} criterion {id} ({name}): {} [{elapsed:.1?}]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        all &= o.passed;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- criterion 1

fn oracle_suite() -> Result<Outcome, Error> {
    let mut accepted = 0;
    let mut rejected = 0;
    let mut worst_dp: f64 = 0.0;
    let mut failures = Vec::new();
    for b in [2, 3] {
        for n in 2..=4 {
            for j in [2, 3] {
                for rep in 0..3u64 {
                    let seed = derive_seed(2024, "acceptance-lattice", (b * 100 + n * 10 + j) as u64 * 8 + rep);
                    let model = LatticeModel::random(&RandomLattice::new(b, n, j), seed)?;
                    let exact = exact_value(&model);
                    let mut too_large = false;
                    'levels: for level in 0..=n {
                        for i in 0..j {
                            match brute_force_value(&model, level, i) {
                                Ok(v) => {
                                    for (k, value) in v.iter().enumerate() {
                                        worst_dp = worst_dp.max((value - exact.values[level][[k, i]]).abs());
                                    }
                                }
                                Err(Error::TooLarge { .. }) => {
                                    too_large = true;
                                    break 'levels;
                                }
                                Err(e) => return Err(e),
                            }
                        }
                    }
                    if too_large {
                        rejected += 1;
                        continue;
                    }
                    accepted += 1;
                    let cert = certify(&model, &CertifyConfig { seed, ..CertifyConfig::default() })?.certification;
                    if !cert.passed() {
                        failures.push(format!(
                            "b={b} N={n} J={j} #{rep}: {}",
                            cert.failure().unwrap_or_else(|| "no checks ran".into())
                        ));
                    }
                }
            }
        }
    }
    let passed = accepted >= 20 && worst_dp <= 1e-12 && failures.is_empty();
    Ok(outcome(
        passed,
        format!(
            "{accepted} instances certified ({rejected} over the enumeration cap skipped), \
             max |DP - enumeration| = {worst_dp:.1e}{}",
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join(", ")) }
        ),
    ))
}

// ---------------------------------------------------------------- criterion 2

#[derive(Default)]
struct FdStats {
    worst: f64,
    checked: usize,
    /// Parameters whose stencil straddled a ReLU or regime-max kink at every step size.
    at_kink: usize,
}

/// Compares `grads` with central differences, shrinking the step whenever the
/// `h` and `2h` stencils disagree (a kink inside the stencil). Error is
/// `|g - fd| / max(|g|, |fd|, 1e-3)`.
fn fd_check(stats: &mut FdStats, grads: &[f64], params: &[f64], mut loss_at: impl FnMut(&[f64]) -> f64) {
    let mut p = params.to_vec();
    for i in 0..params.len() {
        let mut fd = None;
        for h in [1e-5, 2.5e-6, 6.25e-7] {
            let mut at = |shift: f64| {
                p[i] = params[i] + shift;
                let v = loss_at(&p);
                p[i] = params[i];
                v
            };
            let c1 = (at(h) - at(-h)) / (2.0 * h);
            let c2 = (at(2.0 * h) - at(-2.0 * h)) / (4.0 * h);
            if (c1 - c2).abs() <= 1e-4 * c1.abs().max(c2.abs()).max(1e-3) {
                fd = Some((4.0 * c1 - c2) / 3.0);
                break;
            }
        }
        match fd {
            Some(fd) => {
                stats.checked += 1;
                stats.worst = stats.worst.max((grads[i] - fd).abs() / grads[i].abs().max(fd.abs()).max(1e-3));
            }
            None => stats.at_kink += 1,
        }
    }
}

/// Moves every parameter off its initial value; zero betas put every row of a
/// constant-input batch exactly on the ReLU kink.
fn jitter(net: &mut Network, seed: u64) {
    let mut rng = seeded(seed);
    net.visit_params_mut(|p| *p += rng.gen_range(-0.2..0.2));
}

fn small_gbm() -> Result<SwitchingProblem, Error> {
    let mut spec = ProblemSpec::gbm_three_regime(2);
    spec.grid = TimeGrid::new(1.0, 2, 2)?;
    SwitchingProblem::from_spec(spec)
}

/// Stage losses of the dual solver (Brownian and jump integrands, D1 and D2)
/// and of the primal softmax policy, against central differences.
fn gradients() -> Result<Outcome, Error> {
    let mut stats = FdStats::default();
    let mut nets = 0;
    let gbm = small_gbm()?;
    let mut jump_spec = ProblemSpec::expou_jump(2)?;
    jump_spec.grid = TimeGrid::new(2.0 / 720.0, 2, 1)?;
    let jump = SwitchingProblem::from_spec(jump_spec)?;

    for (problem, tag) in [(&gbm, "gbm"), (&jump, "jump")] {
        for draw in 0..10u64 {
            let seed = derive_seed(77, tag, draw);
            let mut pen = DualPenalty::new(problem, &PenaltyArch::for_problem(problem), seed)?;
            for (k, net) in pen.nets.iter_mut().flatten().enumerate() {
                jitter(net, seed ^ k as u64);
            }
            if let Some(jn) = &mut pen.jump_nets {
                for (k, net) in jn.iter_mut().flatten().enumerate() {
                    jitter(net, !seed ^ k as u64);
                }
            }
            let paths = simulate(&problem.dynamics, &problem.grid, 8, seed, &SimOptions::default())?;
            let tables = evaluate_payoffs(problem, &paths)?;
            let loss = if draw % 2 == 0 { DualLoss::L2 } else { DualLoss::Upper };
            let n = (draw % 2) as usize;
            // continuation from the later stage for n = 0
            let next = if n == 1 {
                tables.terminal.clone()
            } else {
                let later = DualStage::new(&pen, &paths, &tables, 1, &tables.terminal, None, vec![0]);
                later.values(&later.increments(&mut pen.clone())?)?
            };
            let eta = match loss {
                DualLoss::L2 => Some(Baseline::linear(0.45).eval(n, 2, problem.grid.date_time(n), paths.date_states(n))?),
                DualLoss::Upper => None,
            };
            let stage = DualStage::new(&pen, &paths, &tables, n, &next, eta, vec![0, 1, 2]);
            let g = stage.loss_and_gradients(&mut pen.clone())?;
            for i in 0..3 {
                let params = pen.nets[n][i].params();
                fd_check(&mut stats, &g.nets[i], &params, |p| {
                    let mut probe = pen.clone();
                    probe.nets[n][i].set_params(p).unwrap();
                    stage.loss(&mut probe).unwrap()
                });
                nets += 1;
                if let (Some(jg), Some(jn)) = (&g.jump_nets, &pen.jump_nets) {
                    let params = jn[n][i].params();
                    fd_check(&mut stats, &jg[i], &params, |p| {
                        let mut probe = pen.clone();
                        probe.jump_nets.as_mut().unwrap()[n][i].set_params(p).unwrap();
                        stage.loss(&mut probe).unwrap()
                    });
                    nets += 1;
                }
            }
        }
    }

    for draw in 0..10u64 {
        let seed = derive_seed(78, "policy", draw);
        let mut policy = Policy::new(2, 3, 2, &PolicyArch::for_dim(2), seed)?;
        for (k, net) in policy.nets.iter_mut().enumerate() {
            jitter(net, seed ^ k as u64);
        }
        let paths = simulate(&gbm.dynamics, &gbm.grid, 8, seed, &SimOptions::default())?;
        let batch = ScenarioBatch::from_paths(&gbm, &paths)?;
        let s = (draw % 2) as usize;
        let cont = if s == 1 {
            batch.tables.terminal.clone()
        } else {
            let mut rng = seeded(seed);
            Array2::from_shape_simple_fn((8, 3), || rng.gen_range(5.0..8.0))
        };
        let stage = PrimalStage::new(&policy, &batch, s, &cont, 0.3 + 0.1 * draw as f64)?;
        let (_, grads) = stage.loss_and_gradient(&mut policy.nets[s].clone())?;
        let params = policy.nets[s].params();
        fd_check(&mut stats, &grads, &params, |p| {
            let mut net = policy.nets[s].clone();
            net.set_params(p).unwrap();
            stage.loss(&mut net).unwrap()
        });
        nets += 1;
    }
    let total = stats.checked + stats.at_kink;
    Ok(outcome(
        stats.worst < 1e-5 && stats.at_kink * 100 <= total,
        format!(
            "{nets} network gradients over 30 parameter draws, max relative error {:.2e} on {} parameters ({} skipped at kinks)",
            stats.worst, stats.checked, stats.at_kink
        ),
    ))
}

// ---------------------------------------------------------------- criterion 3

fn max_networks() -> Result<Outcome, Error> {
    let mut worst: f64 = 0.0;
    let mut size_ok = true;
    let mut sizes = Vec::new();
    for m in [2usize, 3, 4, 8] {
        let mut rng = seeded(derive_seed(3, "maxnet", m as u64));
        let members: Vec<Network> = (0..m)
            .map(|_| {
                let spec = MlpSpec {
                    batch_norm: false,
                    ..MlpSpec::new(3, rng.gen_range(3..9), 3, 1)
                };
                Network::mlp(&spec, &mut rng)
            })
            .collect::<Result<_, _>>()?;
        let net = max_network(&members)?;
        let x = Array2::from_shape_simple_fn((1000, 3), || rng.gen_range(-3.0..3.0));
        let got = net.eval(x.view())?;
        let outs: Vec<Array2<f64>> = members.iter().map(|n| n.eval(x.view())).collect::<Result<_, _>>()?;
        for r in 0..1000 {
            let want = outs.iter().map(|o| o[[r, 0]]).fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max((got[[r, 0]] - want).abs() / want.abs().max(1.0));
        }
        let bound = 7 * (m - 1) + members.iter().map(Network::size).sum::<usize>();
        size_ok &= net.size() <= bound;
        sizes.push(format!("M={m}: {}/{bound}", net.size()));
    }
    let tol = 2f64.powi(-40);
    Ok(outcome(
        worst <= tol && size_ok,
        format!("max relative deviation {worst:.1e} (limit {tol:.1e}); size/bound {}", sizes.join(", ")),
    ))
}

// ---------------------------------------------------------------- criterion 4

fn single_regime() -> Result<Outcome, Error> {
    let mut spec = ProblemSpec::gbm_three_regime(2);
    spec.running = vec!["0".into()];
    spec.terminal = vec!["x1 + x2".into()];
    let problem = SwitchingProblem::from_spec(spec)?;
    let target = 2.0 * 50.0 * (-0.05f64).exp();

    let dual = DualTrainConfig {
        epochs: 30,
        batch_size: 512,
        inner_steps: 5,
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        baseline: Baseline::Custom {
            expr: "(x1 + x2) * (0.95123 + 0.04877 * t)".into(),
        },
        arch: Some(PenaltyArch {
            width: 10,
            ..PenaltyArch::for_problem(&problem)
        }),
        seed: 4,
        ..DualTrainConfig::default()
    };
    let penalty = train_dual(&problem, &dual)?.penalty;
    let policy = train_policy(
        &problem,
        &PrimalTrainConfig {
            epochs: 2,
            batch_size: 256,
            seed: 4,
            ..PrimalTrainConfig::default()
        },
    )?
    .policy;
    let opts = EvalOptions {
        n_paths: 1_000_000,
        seed: 44,
        chunk: 8192,
        ..EvalOptions::new(1_000_000, 44)
    };
    let report = estimate_bounds(&problem, &penalty, &policy, &opts)?;
    let r = report.regimes[0];
    let ub_ok = (r.ub - target).abs() <= 3.0 * r.ub_se;
    let lb_ok = (r.lb - target).abs() <= 3.0 * r.lb_se;
    // with one regime and f = 0 the lower-bound samples are the terminal payoffs,
    // so the SE ratio squared is the pathwise variance ratio
    let ratio = (r.ub_se / r.lb_se).powi(2);
    Ok(outcome(
        ub_ok && lb_ok && ratio < 0.25,
        format!(
            "target {target:.4}: UB {:.4} ± {:.4}, LB {:.4} ± {:.4} on {} paths; variance ratio {ratio:.4}",
            r.ub, r.ub_se, r.lb, r.lb_se, report.n_paths
        ),
    ))
}

// ---------------------------------------------------------------- criterion 5

const TABLE_UB: [f64; 3] = [7.191, 7.261, 7.069];
const TABLE_LB: [f64; 3] = [7.084, 7.150, 6.950];

fn desk_table() -> (Result<Outcome, Error>, Option<(SwitchingProblem, DualPenalty)>) {
    let mut last = None;
    let mut notes = Vec::new();
    for (attempt, seed) in [0u64, 1].into_iter().enumerate() {
        let run = || -> Result<(bool, String, SwitchingProblem, DualPenalty), Error> {
            let mut cfg = RunConfig::desk_scale("gbm3regime", 2);
            cfg.seed = seed;
            let cfg = cfg.resolved();
            let problem = cfg.problem()?;
            let penalty = train_dual(&problem, &cfg.dual)?.penalty;
            let policy = train_policy(&problem, &cfg.primal)?.policy;
            let report = estimate_bounds(&problem, &penalty, &policy, &cfg.eval_options())?;
            let mut ok = report.max_gap <= 0.30;
            let mut cells = Vec::new();
            for (i, r) in report.regimes.iter().enumerate() {
                ok &= (r.ub - TABLE_UB[i]).abs() <= 0.25;
                ok &= (r.lb - TABLE_LB[i]).abs() <= 0.25;
                ok &= r.ub >= r.lb - 4.0 * (r.ub_se + r.lb_se);
                cells.push(format!("{:.3}/{:.3}", r.ub, r.lb));
            }
            let detail = format!(
                "seed {seed}: UB/LB [{}], gap(max) {:.3}, {} paths",
                cells.join(", "),
                report.max_gap,
                report.n_paths
            );
            Ok((ok, detail, problem, penalty))
        };
        match run() {
            Ok((ok, detail, problem, penalty)) => {
                notes.push(detail);
                last = Some((problem, penalty));
                if ok {
                    let retry = if attempt > 0 { " (after one re-run)" } else { "" };
                    return (Ok(outcome(true, format!("{}{retry}", notes.join("; ")))), last);
                }
            }
            Err(e) => notes.push(format!("seed {seed}: {e}")),
        }
    }
    (Ok(outcome(false, notes.join("; "))), last)
}

// ---------------------------------------------------------------- criterion 6

fn hedging(desk: Option<&(SwitchingProblem, DualPenalty)>) -> Result<Outcome, Error> {
    let trained;
    let (problem, penalty) = match desk {
        Some((p, pen)) => (p, pen),
        None => {
            // criterion 5 was skipped (ACCEPTANCE_ONLY); train a short desk penalty here
            let cfg = RunConfig::desk_scale("gbm3regime", 2).resolved();
            let p = cfg.problem()?;
            let pen = train_dual(
                &p,
                &DualTrainConfig {
                    epochs: 10,
                    ..cfg.dual.clone()
                },
            )?
            .penalty;
            trained = (p, pen);
            (&trained.0, &trained.1)
        }
    };
    let h = hedging_errors(problem, penalty, 0, &EvalOptions::new(65_536, 66), HedgeSign::Shortfall)?;
    let m = h.metrics;
    let mc_ok = m.cvar99 >= m.cvar95 && m.cvar95 >= 0.0 && m.cvar95 >= m.var95;

    let model = LatticeModel::random(&RandomLattice::new(3, 3, 3), 606)?;
    let exact = exact_value(&model);
    let doob = doob_martingale(&model, &exact);
    let v = dual_backward(&model.tables(), &model.leaf_increments(&doob))?;
    let leaves = model.sample_leaves(5000, 607);
    let mut lattice_worst: f64 = 0.0;
    for i in 0..model.n_regimes {
        let u: Vec<f64> = leaves.iter().map(|&q| v.upper[[q, 0, i]]).collect();
        let r = hedge_report_from_samples(&u, i, HedgeSign::Shortfall, 20)?;
        lattice_worst = lattice_worst.max(r.metrics.cvar95.abs()).max(r.metrics.cvar99.abs());
    }
    Ok(outcome(
        mc_ok && lattice_worst <= 1e-10,
        format!(
            "GBM d=2 regime 1: VaR95 {:.3}, CVaR95 {:.3}, CVaR99 {:.3}; exact Doob lattice hedge max |CVaR| {lattice_worst:.1e}",
            m.var95, m.cvar95, m.cvar99
        ),
    ))
}

// ---------------------------------------------------------------- criterion 7

fn error_propagation() -> Result<Outcome, Error> {
    let mut spec = ProblemSpec::gbm_three_regime(2);
    spec.grid = TimeGrid::new(1.0, 4, 8)?;
    let problem = SwitchingProblem::from_spec(spec)?;
    let paths = simulate(&problem.dynamics, &problem.grid, 256, 7007, &SimOptions::default())?;
    let tables = evaluate_payoffs(&problem, &paths)?;
    let arch = PenaltyArch::for_problem(&problem);
    let (b, n, j) = (256, problem.grid.n_dates, problem.n_regimes());
    let mut worst = f64::NEG_INFINITY;
    for r in 0..100u64 {
        let pa = DualPenalty::new(&problem, &arch, derive_seed(7, "pair-a", r))?;
        let pb = DualPenalty::new(&problem, &arch, derive_seed(7, "pair-b", r))?;
        let (xa, xb) = (all_increments(&pa, &paths)?, all_increments(&pb, &paths)?);
        let (va, vb) = (dual_backward(&tables, &xa)?, dual_backward(&tables, &xb)?);
        for p in 0..b {
            let gap = |s: usize| (0..j).map(|i| (va.upper[[p, s, i]] - vb.upper[[p, s, i]]).abs()).fold(0.0, f64::max);
            for s in 0..n {
                let dxi = (0..j).map(|i| (xa[[p, s, i]] - xb[[p, s, i]]).abs()).fold(0.0, f64::max);
                worst = worst.max(gap(s) - gap(s + 1) - dxi);
            }
        }
    }
    Ok(outcome(
        worst <= 1e-9,
        format!("100 penalty pairs on 256 paths x 4 dates, max excess {worst:.2e} (tolerance 1e-9)"),
    ))
}

// ---------------------------------------------------------------- criterion 8

fn jump_smoke() -> Result<Outcome, Error> {
    let cfg = RunConfig::desk_scale("expou_jump", 2).resolved();
    let problem = cfg.problem()?;
    let dual = DualTrainConfig {
        epochs: 30,
        ..cfg.dual.clone()
    };
    let primal = PrimalTrainConfig {
        epochs: 30,
        batch_size: 1024,
        ..cfg.primal.clone()
    };
    let trained = train_dual(&problem, &dual)?;
    let policy = train_policy(&problem, &primal)?.policy;
    let finite = trained.trace.iter().all(|t| t.loss.is_finite() && t.grad_norm.is_finite());
    let report = estimate_bounds(&problem, &trained.penalty, &policy, &EvalOptions::new(16_384, 88))?;
    let cells: Vec<String> = report
        .regimes
        .iter()
        .map(|r| format!("{:.4}±{:.4}/{:.4}±{:.4}", r.ub, r.ub_se, r.lb, r.lb_se))
        .collect();
    Ok(outcome(
        finite && report.consistent(4.0),
        format!(
            "K={} N={}: {} dual epochs without divergence; UB/LB [{}]",
            problem.grid.substeps,
            problem.grid.n_dates,
            dual.epochs,
            cells.join(", ")
        ),
    ))
}
