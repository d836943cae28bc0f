use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use deepswitch::dual::{write_trace_csv, DualPenalty, DualTrainer, TraceRow};
use deepswitch::eval::{
    estimate_bounds, export_regions, grade, hedging_errors, reference_row, write_bounds_csv, write_hedge_csv,
    write_regions_csv, BoundReport, HedgeReport, Tolerance, MIN_RISK_SAMPLES,
};
use deepswitch::oracle::{brute_force_value, certify as certify_lattice, LatticeModel, RandomLattice};
use deepswitch::primal::{Policy, PrimalTrainer, SimulatedScenarios};
use deepswitch::rng::derive_seed;
use deepswitch::sim::{simulate as simulate_paths, write_dump, SimOptions};
use deepswitch::{Error, SwitchingProblem};
use log::info;
use serde_json::{json, Value};

use crate::context::{Context, DUAL_CHECKPOINT, POLICY_CHECKPOINT};

pub fn simulate(ctx: &Context, n_paths: usize) -> Result<bool> {
    let problem = ctx.problem()?;
    let seed = derive_seed(ctx.config.seed, "simulate", 0);
    let paths = simulate_paths(
        &problem.dynamics,
        &problem.grid,
        n_paths,
        seed,
        &SimOptions {
            memory_budget: ctx.config.dual.memory_budget,
            path_offset: 0,
        },
    )?;
    let mut w = ctx.create("paths.bin")?;
    write_dump(&paths, &mut w)?;
    w.flush()?;
    ctx.write_report(
        true,
        json!({ "dump": "paths.bin", "n_paths": n_paths, "stream_seed": seed, "grid": problem.grid }),
    )?;
    Ok(true)
}

pub fn train_dual(ctx: &Context) -> Result<bool> {
    let problem = ctx.problem()?;
    let body = train_dual_into(ctx, &problem)?.1;
    ctx.write_report(true, body)?;
    Ok(true)
}

fn train_dual_into(ctx: &Context, problem: &SwitchingProblem) -> Result<(DualPenalty, Value)> {
    info!(
        "training dual penalty on {} (d = {}, {} epochs, batch {})",
        problem.name(),
        problem.dim(),
        ctx.config.dual.epochs,
        ctx.config.dual.batch_size
    );
    let mut trainer = DualTrainer::new(problem, &ctx.config.dual)?;
    trainer.run()?;
    let body = json!({
        "checkpoint": DUAL_CHECKPOINT,
        "epochs": trainer.epochs_done(),
        "reference_regime": trainer.reference_regime() + 1,
        "final_stage0_loss": trainer.last_stage0_loss(),
        "penalty_size": trainer.penalty.size(),
    });
    write_trace(ctx, "trace.csv", &trainer.trace)?;
    let penalty = trainer.into_penalty();
    let mut w = ctx.create(DUAL_CHECKPOINT)?;
    penalty.save(&mut w, ctx.provenance())?;
    w.flush()?;
    Ok((penalty, body))
}

pub fn train_primal(ctx: &Context) -> Result<bool> {
    let problem = ctx.problem()?;
    let body = train_primal_into(ctx, &problem)?.1;
    ctx.write_report(true, body)?;
    Ok(true)
}

fn train_primal_into(ctx: &Context, problem: &SwitchingProblem) -> Result<(Policy, Value)> {
    let cfg = &ctx.config.primal;
    info!(
        "training primal policy on {} (d = {}, {} epochs, batch {})",
        problem.name(),
        problem.dim(),
        cfg.epochs,
        cfg.batch_size
    );
    let mut trainer = PrimalTrainer::new(problem.dim(), problem.n_regimes(), problem.grid.n_dates, cfg)?;
    let mut source = SimulatedScenarios {
        problem,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        memory_budget: cfg.memory_budget,
    };
    trainer.run(&mut source)?;
    write_trace(ctx, "primal_trace.csv", &trainer.trace)?;
    let mut w = ctx.create(POLICY_CHECKPOINT)?;
    trainer.policy.save(&mut w, ctx.provenance())?;
    w.flush()?;
    let body = json!({
        "checkpoint": POLICY_CHECKPOINT,
        "epochs": trainer.epochs_done(),
        "final_temperature": trainer.policy.temperature,
    });
    Ok((trainer.policy, body))
}

fn write_trace(ctx: &Context, name: &str, rows: &[TraceRow]) -> Result<()> {
    let mut w = ctx.create(name)?;
    write_trace_csv(rows, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn evaluate(ctx: &Context, dual: Option<PathBuf>, policy: Option<PathBuf>) -> Result<bool> {
    let problem = ctx.problem()?;
    let penalty = ctx.load_penalty(dual)?;
    let policy = ctx.load_policy(policy)?;
    let (bounds, hedge) = bounds_and_hedge(ctx, &problem, &penalty, &policy)?;
    let passed = bounds.consistent(4.0);
    ctx.write_report(passed, json!({ "bounds": bounds, "hedge": hedge.as_ref().map(hedge_summary) }))?;
    Ok(passed)
}

/// Bounds on the evaluation paths plus the hedging report of the configured
/// regime (when there are enough paths for risk metrics); writes `bounds.csv`
/// and `hedge.csv`.
fn bounds_and_hedge(
    ctx: &Context,
    problem: &SwitchingProblem,
    penalty: &DualPenalty,
    policy: &Policy,
) -> Result<(BoundReport, Option<HedgeReport>)> {
    let opts = ctx.config.eval_options();
    info!("estimating bounds on {} paths", opts.n_paths);
    let bounds = estimate_bounds(problem, penalty, policy, &opts)?;
    let hedge = if opts.n_paths >= MIN_RISK_SAMPLES {
        let h = hedging_report(ctx, problem, penalty)?;
        Some(h)
    } else {
        info!("fewer than {MIN_RISK_SAMPLES} paths; CVaR columns left empty");
        None
    };
    let mut w = ctx.create("bounds.csv")?;
    write_bounds_csv(&bounds, hedge.as_ref().map(|h| (h.metrics.cvar95, h.metrics.cvar99)), &mut w)?;
    w.flush()?;
    Ok((bounds, hedge))
}

fn hedging_report(ctx: &Context, problem: &SwitchingProblem, penalty: &DualPenalty) -> Result<HedgeReport> {
    let e = &ctx.config.evaluation;
    let regime = e
        .hedge_regime
        .checked_sub(1)
        .ok_or_else(|| Error::Config("hedge_regime is 1-based".into()))?;
    let report = hedging_errors(problem, penalty, regime, &ctx.config.eval_options(), e.hedge_sign)?;
    let mut w = ctx.create("hedge.csv")?;
    write_hedge_csv(&report, &mut w)?;
    w.flush()?;
    Ok(report)
}

fn hedge_summary(h: &HedgeReport) -> Value {
    json!({
        "regime": h.regime,
        "n_samples": h.n_samples,
        "price": h.price,
        "price_se": h.price_se,
        "sign": h.sign,
        "metrics": h.metrics,
        "definition": h.definition,
    })
}

fn metrics_ordered(h: &HedgeReport) -> bool {
    let m = h.metrics;
    m.cvar99 >= m.cvar95 && m.cvar95 >= m.var95
}

pub fn hedge(ctx: &Context, dual: Option<PathBuf>) -> Result<bool> {
    let problem = ctx.problem()?;
    let penalty = ctx.load_penalty(dual)?;
    let report = hedging_report(ctx, &problem, &penalty)?;
    let passed = metrics_ordered(&report);
    ctx.write_report(passed, hedge_summary(&report))?;
    Ok(passed)
}

pub fn regions(ctx: &Context, dual: Option<PathBuf>, policy: Option<PathBuf>) -> Result<bool> {
    let problem = ctx.problem()?;
    let penalty = ctx.load_penalty(dual)?;
    let policy = ctx.load_policy(policy)?;
    let e = &ctx.config.evaluation;
    let export = export_regions(
        &problem,
        &penalty,
        &policy,
        e.region_date,
        e.region_states,
        e.region_conditional_paths,
        &ctx.config.eval_options(),
    )?;
    let mut w = ctx.create("regions.csv")?;
    write_regions_csv(&export, &mut w)?;
    w.flush()?;
    ctx.write_report(
        true,
        json!({ "date": export.date, "states": export.rows.len(), "agreement": export.agreement() }),
    )?;
    Ok(true)
}

pub fn certify(ctx: &Context, files: &[PathBuf]) -> Result<bool> {
    let settings = &ctx.config.certify;
    let instances: Vec<(String, LatticeModel)> = if files.is_empty() {
        random_instances(settings.instances, ctx.config.seed)?
    } else {
        files
            .iter()
            .map(|p| Ok((p.display().to_string(), load_lattice(p)?)))
            .collect::<Result<_>>()?
    };
    let mut all = true;
    let mut entries = Vec::new();
    for (name, model) in &instances {
        let result = certify_lattice(model, &settings.check)?;
        let root = result.solution.values[0].row(0).to_vec();
        let brute = brute_force_check(model, &root);
        let cert = &result.certification;
        let passed = cert.passed() && brute.as_ref().map_or(true, |(ok, _)| *ok);
        println!(
            "{} {name}: b={} N={} J={}{}",
            if passed { "PASS" } else { "FAIL" },
            model.branching,
            model.n_dates,
            model.n_regimes,
            cert.failure().map(|f| format!(" ({f})")).unwrap_or_default()
        );
        for c in &cert.checks {
            println!("  {} {} (max violation {:e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.max_violation);
        }
        all &= passed;
        entries.push(json!({
            "instance": name,
            "passed": passed,
            "root_values": root,
            "brute_force": brute.map(|(ok, gap)| json!({ "passed": ok, "max_abs_diff": gap })),
            "certification": cert,
        }));
    }
    ctx.write_report(all, json!({ "instances": entries }))?;
    Ok(all)
}

/// DP root values against exhaustive enumeration, when the lattice is small enough.
fn brute_force_check(model: &LatticeModel, root: &[f64]) -> Option<(bool, f64)> {
    let mut worst: f64 = 0.0;
    for i in 0..model.n_regimes {
        match brute_force_value(model, 0, i) {
            Ok(v) => worst = worst.max((v[0] - root[i]).abs()),
            Err(Error::TooLarge { .. }) => return None,
            Err(_) => return Some((false, f64::INFINITY)),
        }
    }
    Some((worst <= 1e-12, worst))
}

fn random_instances(count: usize, seed: u64) -> Result<Vec<(String, LatticeModel)>> {
    let shapes: Vec<(usize, usize, usize)> = [2, 3]
        .into_iter()
        .flat_map(|b| (2..=4).flat_map(move |n| [2, 3].into_iter().map(move |j| (b, n, j))))
        .collect();
    (0..count)
        .map(|k| {
            let (b, n, j) = shapes[k % shapes.len()];
            let s = derive_seed(seed, "certify-instance", k as u64);
            let model = LatticeModel::random(&RandomLattice::new(b, n, j), s)?;
            Ok((format!("random-{k}"), model))
        })
        .collect()
}

fn load_lattice(path: &Path) -> Result<LatticeModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading lattice {}", path.display()))?;
    let model: LatticeModel =
        serde_json::from_str(&text).with_context(|| format!("parsing lattice {}", path.display()))?;
    model.validate().with_context(|| format!("validating lattice {}", path.display()))?;
    Ok(model)
}

pub fn table1(ctx: &Context) -> Result<bool> {
    let problem = ctx.problem()?;
    let d = problem.dim();
    let (penalty, dual_body) = train_dual_into(ctx, &problem)?;
    let (policy, primal_body) = train_primal_into(ctx, &problem)?;
    let (bounds, hedge) = bounds_and_hedge(ctx, &problem, &penalty, &policy)?;
    let reference = if problem.name() == "gbm3regime" { reference_row(d) } else { None };
    let tol = if ctx.desk_scale { Tolerance::DESK } else { Tolerance::FULL };
    let g = grade(&bounds, reference, tol);
    let hedge_ok = hedge.as_ref().map_or(true, metrics_ordered);
    let passed = g.passed && hedge_ok;
    for r in &bounds.regimes {
        println!(
            "regime {}: UB {:.4} ± {:.4}  LB {:.4} ± {:.4}  gap {:.4}",
            r.regime, r.ub, r.ub_se, r.lb, r.lb_se, r.gap
        );
    }
    println!("gap(max) {:.4}; {}", bounds.max_gap, if passed { "PASS" } else { "FAIL" });
    ctx.write_report(
        passed,
        json!({
            "dual": dual_body,
            "primal": primal_body,
            "bounds": bounds,
            "hedge": hedge.as_ref().map(hedge_summary),
            "grade": g,
        }),
    )?;
    Ok(passed)
}
