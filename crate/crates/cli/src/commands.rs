use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use serde::Serialize;
use serde_json::json;

use mfgame::best_reply::{self, BestReplyError};
use mfgame::cost_models::{
    check_coercivity, check_structure, CoercivityReport, CostFamily, SampleBox, StructureReport,
};
use mfgame::diagnostics;
use mfgame::functional::{self, GameSpec};
use mfgame::scenario_tree::AdaptedProcess;
use mfgame::sdg_adapters;
use mfgame::sweep;
use mfgame::topkis::{self, TopkisError};

use crate::config::{self, CoercivityMode, Mode, RunConfig};
use crate::output::{costs_csv, equilibrium_csv, OutputDir};

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or unreadable configuration (exit 2).
    Usage(anyhow::Error),
    /// The run itself failed (exit 1).
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::Domain(e)
    }
}

pub type CmdResult = std::result::Result<i32, CliError>;

pub fn load(path: &Path) -> std::result::Result<RunConfig, CliError> {
    config::load(path).map_err(CliError::Usage)
}

fn output_dir(cfg: &RunConfig, out: Option<PathBuf>) -> Result<OutputDir> {
    let root = out.unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    OutputDir::create(root, &cfg.output.formats)
}

#[derive(Debug, Serialize)]
struct CheckRow {
    player: usize,
    stage: &'static str,
    #[serde(flatten)]
    report: StructureReport,
    passed: bool,
}

/// Radius of the sampled coercivity probe.
const COERCIVITY_RADIUS: f64 = 100.0;

#[derive(Debug, Serialize)]
struct GrowthRow {
    stage: &'static str,
    #[serde(flatten)]
    report: CoercivityReport,
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    structure: Vec<CheckRow>,
    /// Advisory only; the solver detects divergence itself.
    coercivity: Vec<GrowthRow>,
    price_floor: f64,
    price_floor_required: Option<f64>,
    price_floor_ok: bool,
    gradients_ok: bool,
    passed: bool,
}

fn structure_rows(
    cfg: &RunConfig,
    running: &[CostFamily],
    terminal: &[CostFamily],
    region: &mfgame::cost_models::SampleBox,
) -> Result<Vec<CheckRow>> {
    let check = cfg.structure_check();
    let mut rows = Vec::new();
    for (i, (r, t)) in running.iter().zip(terminal).enumerate() {
        for (stage, family) in [("running", r), ("terminal", t)] {
            let report = check_structure(family, i, cfg.players.dim, region, &check)?;
            let passed = report.passed();
            rows.push(CheckRow { player: i, stage, report, passed });
        }
    }
    Ok(rows)
}

fn growth_rows(
    cfg: &RunConfig,
    stage: &'static str,
    families: &[CostFamily],
    region: &SampleBox,
) -> Result<Vec<GrowthRow>> {
    let check = cfg.structure_check();
    families
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let report = check_coercivity(f, i, cfg.players.dim, region, &check, COERCIVITY_RADIUS)?;
            Ok(GrowthRow { stage, report })
        })
        .collect()
}

fn validation(cfg: &RunConfig, game: &GameSpec) -> Result<ValidationReport> {
    let region = cfg.sample_box(game.exogenous.dims(), cfg.checks.l_range);
    let mut structure = structure_rows(cfg, &game.running, &game.terminal, &region)?;
    let mut coercivity = Vec::new();
    if cfg.processes.coercivity == CoercivityMode::Costs {
        coercivity.extend(growth_rows(cfg, "terminal", &game.terminal, &region)?);
    }
    if cfg.sdg.is_some() {
        let (tree, spec) = cfg.build_sdg()?;
        let lifted = sdg_adapters::transform_game(&spec, &tree)?;
        let k = spec.exogenous.dims();
        let mut region = cfg.sample_box(lifted.game.exogenous.dims(), cfg.checks.l_range);
        for b in region.l.iter_mut().skip(k) {
            *b = (0.5, 2.0);
        }
        let rows = structure_rows(cfg, &lifted.game.running, &lifted.game.terminal, &region)?;
        if cfg.processes.coercivity == CoercivityMode::Costs {
            coercivity.extend(growth_rows(cfg, "lifted_terminal", &lifted.game.terminal, &region)?);
        }
        structure.extend(rows.into_iter().map(|mut r| {
            r.stage = if r.stage == "running" { "lifted_running" } else { "lifted_terminal" };
            r
        }));
    }
    let floor = game.price_floor();
    let required = match cfg.processes.coercivity {
        CoercivityMode::Costs => None,
        CoercivityMode::Price => Some(cfg.processes.price_floor.unwrap_or(f64::MIN_POSITIVE)),
    };
    let price_floor_ok = required.is_none_or(|c| c > 0.0 && floor >= c);
    let gradients_ok = (0..game.players).all(|i| game.has_gradients(i));
    let passed = structure.iter().all(|r| r.passed) && price_floor_ok && gradients_ok;
    Ok(ValidationReport {
        structure,
        coercivity,
        price_floor: floor,
        price_floor_required: required,
        price_floor_ok,
        gradients_ok,
        passed,
    })
}

fn print_validation(rep: &ValidationReport) {
    println!(
        "{:<7} {:<16} {:<28} {:>12} {:>12} {:>12}  result",
        "player", "stage", "family", "convexity", "dec_diff", "submod"
    );
    for r in &rep.structure {
        let verdict = if r.passed { "pass".to_string() } else { format!("FAIL ({})", r.report.failures().join(", ")) };
        println!(
            "{:<7} {:<16} {:<28} {:>12.3e} {:>12.3e} {:>12.3e}  {}",
            r.player,
            r.stage,
            r.report.family,
            r.report.convexity_violation,
            r.report.decreasing_differences_violation,
            r.report.submodularity_violation,
            verdict
        );
        for w in &r.report.warnings {
            println!("        warning: {w}");
        }
    }
    for r in &rep.coercivity {
        println!(
            "coercivity: player {} {} {}: min growth {:.3e} over +{} steps  {}",
            r.report.player,
            r.stage,
            r.report.family,
            r.report.min_growth,
            r.report.radius,
            if r.report.coercive() { "pass" } else { "WARN (cost falls as the control grows)" }
        );
    }
    let bound = |c: f64| if c <= f64::MIN_POSITIVE { "> 0".to_string() } else { format!("≥ {c:.6e}") };
    match rep.price_floor_required {
        Some(c) if !rep.price_floor_ok => {
            println!("price floor violated: min f = {:.6e}, required {}", rep.price_floor, bound(c))
        }
        Some(c) => println!("price floor: min f = {:.6e} {}  pass", rep.price_floor, bound(c)),
        None => println!("price floor: min f = {:.6e} (not required)", rep.price_floor),
    }
    if !rep.gradients_ok {
        println!("gradients: unavailable for at least one family  FAIL");
    }
    println!("validation: {}", if rep.passed { "pass" } else { "FAIL" });
}

pub fn validate(path: &Path) -> CmdResult {
    let cfg = load(path)?;
    let game = cfg.build_game().map_err(CliError::Usage)?;
    let rep = validation(&cfg, &game)?;
    print_validation(&rep);
    Ok(if rep.passed { 0 } else { 1 })
}

fn precheck(cfg: &RunConfig, game: &GameSpec, force: bool) -> Result<bool> {
    if force {
        return Ok(true);
    }
    let rep = validation(cfg, game)?;
    if !rep.passed {
        print_validation(&rep);
        eprintln!("error: validation failed; rerun with --force to solve anyway");
    }
    Ok(rep.passed)
}

fn describe_failure(e: &TopkisError) -> String {
    match e {
        TopkisError::Reply { source: BestReplyError::Divergence { flagged_nodes, player, .. }, .. } => {
            let shown: Vec<String> = flagged_nodes.iter().take(32).map(|n| n.to_string()).collect();
            let more =
                if flagged_nodes.len() > 32 { format!(" (+{} more)", flagged_nodes.len() - 32) } else { String::new() };
            format!("coercivity failure: {e}\nflagged nodes for player {player}: [{}]{more}", shown.join(", "))
        }
        _ => e.to_string(),
    }
}

fn failure_summary(e: &TopkisError) -> serde_json::Value {
    let flagged = match e {
        TopkisError::Reply { source: BestReplyError::Divergence { flagged_nodes, .. }, .. } => flagged_nodes.clone(),
        _ => Vec::new(),
    };
    json!({
        "status": "failed",
        "error": e.to_string(),
        "coercivity_failure": e.is_coercivity_failure(),
        "flagged_nodes": flagged,
    })
}

pub fn solve(path: &Path, out: Option<PathBuf>, force: bool, greatest: bool) -> CmdResult {
    let cfg = load(path)?;
    let game = cfg.build_game().map_err(CliError::Usage)?;
    if !precheck(&cfg, &game, force)? {
        return Ok(1);
    }
    let set = cfg.admissible_set();
    let opts = cfg.topkis_options();
    let dir = output_dir(&cfg, out)?;
    let solved =
        if greatest { topkis::solve_greatest(&game, &set, &opts) } else { topkis::solve_least(&game, &set, &opts) };
    let eq = match solved {
        Ok(eq) => eq,
        Err(e) => {
            dir.csv("trace.csv", &topkis::trace_csv(e.partial_trace()))?;
            dir.json("summary.json", &failure_summary(&e))?;
            eprintln!("error: {}", describe_failure(&e));
            return Ok(1);
        }
    };
    let foc = diagnostics::foc_report(&game, &eq.profile, &set).map_err(anyhow::Error::from)?;
    let cert = topkis::certify_equilibrium(&game, &set, &eq.profile, cfg.certify_budget(), &opts.inner)
        .map_err(anyhow::Error::from)?;
    dir.csv("equilibrium.csv", &equilibrium_csv(&game.tree, &eq.profile))?;
    dir.csv("costs.csv", &costs_csv(&eq.costs))?;
    dir.csv("trace.csv", &eq.trace_csv())?;
    dir.json(
        "summary.json",
        &json!({
            "status": "converged",
            "direction": eq.direction,
            "admissible": set,
            "costs": eq.costs,
            "iterations": eq.iterations,
            "changes": eq.changes,
            "monotonicity": eq.monotonicity,
            "foc": foc,
            "certificate": cert,
        }),
    )?;
    println!("equilibrium after {} best-reply steps", eq.iterations);
    for (i, c) in eq.costs.iter().enumerate() {
        println!("  player {i}: cost {c:.10}, deviation gain {:.3e}", cert.gaps[i]);
    }
    println!("  certified: {}", cert.certified);
    println!("outputs written to {}", dir.path().display());
    Ok(0)
}

pub fn sweep(path: &Path, out: Option<PathBuf>, force: bool, cold_start: bool) -> CmdResult {
    let cfg = load(path)?;
    if cfg.admissible.mode != Mode::Lipschitz {
        return Err(CliError::Usage(anyhow!("sweep needs admissible.mode = \"lipschitz\"")));
    }
    let schedule = cfg
        .admissible
        .n_schedule
        .clone()
        .ok_or_else(|| CliError::Usage(anyhow!("sweep needs admissible.n_schedule")))?;
    let game = cfg.build_game().map_err(CliError::Usage)?;
    if !precheck(&cfg, &game, force)? {
        return Ok(1);
    }
    let mut opts = cfg.sweep_options();
    if cold_start {
        opts.warm_start = false;
    }
    let dir = output_dir(&cfg, out)?;
    let rep = match sweep::run_sweep(&game, &schedule, &opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(1);
        }
    };
    dir.csv("sweep.csv", &rep.to_csv())?;
    let mut levels = String::from("n,player,coord,mean_terminal_level\n");
    for p in &rep.points {
        for (i, a) in p.profile.iter().enumerate() {
            for c in 0..a.dims() {
                let mean: f64 = game.tree.leaves().map(|id| game.tree.node_prob(id) * a.get(id, c)).sum();
                let _ = writeln!(levels, "{},{i},{c},{mean:.12e}", p.n);
            }
        }
    }
    dir.csv("sweep_levels.csv", &levels)?;
    dir.json("sweep_summary.json", &rep)?;
    print!("{}", rep.to_csv());
    println!("verdicts: {}", serde_json::to_string(&rep.verdicts).map_err(anyhow::Error::from)?);
    for f in &rep.failures {
        eprintln!("error at n = {}: {}", f.n, f.message);
    }
    println!("outputs written to {}", dir.path().display());
    Ok(if rep.failures.is_empty() { 0 } else { 1 })
}

pub fn sdg(path: &Path, out: Option<PathBuf>, force: bool) -> CmdResult {
    let cfg = load(path)?;
    let (tree, spec) = cfg.build_sdg().map_err(CliError::Usage)?;
    let lifted = sdg_adapters::transform_game(&spec, &tree).map_err(|e| CliError::Usage(e.into()))?;
    for w in &lifted.warnings {
        eprintln!("warning: {w}");
    }
    let raw_game = cfg.build_game().map_err(CliError::Usage)?;
    if !precheck(&cfg, &raw_game, force)? {
        return Ok(1);
    }
    let set = cfg.admissible_set();
    let opts = cfg.topkis_options();
    let dir = output_dir(&cfg, out)?;
    let eq = match topkis::solve_least(&lifted.game, &set, &opts) {
        Ok(eq) => eq,
        Err(e) => {
            dir.csv("trace.csv", &topkis::trace_csv(e.partial_trace()))?;
            dir.json("summary.json", &failure_summary(&e))?;
            eprintln!("error: {}", describe_failure(&e));
            return Ok(1);
        }
    };
    let back = sdg_adapters::map_back(&spec, &tree, &lifted.multiplier, &eq.profile);
    let raw = sdg_adapters::raw_costs(&spec, &tree, &back.controls).map_err(anyhow::Error::from)?;
    let identity_gap = eq.costs.iter().zip(&raw).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let mut table = String::from("node_id,time,player,xi,dxi,state\n");
    for id in 0..tree.len() {
        for (j, (xi, x)) in back.controls.iter().zip(&back.states).enumerate() {
            let dxi = xi.get(id, 0) - tree.node(id).parent.map_or(0.0, |p| xi.get(p, 0));
            let _ = writeln!(
                table,
                "{id},{},{j},{:.12e},{:.12e},{:.12e}",
                tree.time_of(id),
                xi.get(id, 0),
                dxi,
                x.get(id, 0)
            );
        }
    }
    dir.csv("equilibrium_transformed.csv", &equilibrium_csv(&tree, &eq.profile))?;
    dir.csv("equilibrium_original.csv", &table)?;
    dir.csv("costs.csv", &costs_csv(&raw))?;
    dir.csv("trace.csv", &eq.trace_csv())?;
    dir.json(
        "summary.json",
        &json!({
            "status": "converged",
            "iterations": eq.iterations,
            "transformed_costs": eq.costs,
            "original_costs": raw,
            "identity_gap": identity_gap,
            "warnings": lifted.warnings,
        }),
    )?;
    println!("transformed equilibrium after {} best-reply steps", eq.iterations);
    for (i, c) in raw.iter().enumerate() {
        println!("  player {i}: cost {c:.10}");
    }
    println!("  |J_transformed − J_original| = {identity_gap:.3e}");
    println!("outputs written to {}", dir.path().display());
    Ok(0)
}

#[derive(Debug, Serialize)]
struct OracleRow {
    player: usize,
    gradient_objective: f64,
    grid_objective: f64,
    objective_gap: f64,
    sup_gap: f64,
    gradient_iterations: usize,
}

pub fn oracle_compare(path: &Path, out: Option<PathBuf>, grid_step: f64, level_cap: Option<f64>) -> CmdResult {
    let cfg = load(path)?;
    if !(grid_step > 0.0) {
        return Err(CliError::Usage(anyhow!("--grid-step must be positive")));
    }
    let game = cfg.build_game().map_err(CliError::Usage)?;
    let set = cfg.admissible_set();
    let opts = cfg.solver_options();
    let dir = output_dir(&cfg, out)?;
    let zero = AdaptedProcess::zeros(&game.tree, game.dim);
    let mut rows = Vec::new();
    for i in 0..game.players {
        let others = vec![zero.clone(); game.players - 1];
        let grid = match best_reply::brute_force_best_reply(&game, i, &others, &set, grid_step, level_cap) {
            Ok(g) => g,
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(1);
            }
        };
        let pg = best_reply::best_reply(&game, i, &others, &set, &opts).map_err(anyhow::Error::from)?;
        let profile = best_reply::assemble_profile(i, pg.strategy.clone(), &others);
        let pg_obj = functional::cost(&game, i, &profile).map_err(anyhow::Error::from)?;
        rows.push(OracleRow {
            player: i,
            gradient_objective: pg_obj,
            grid_objective: grid.objective,
            objective_gap: grid.objective - pg_obj,
            sup_gap: pg.strategy.sup_distance(&grid.strategy),
            gradient_iterations: pg.iterations,
        });
    }
    let mut table = String::from("player,gradient_objective,grid_objective,objective_gap,sup_gap\n");
    for r in &rows {
        let _ = writeln!(
            table,
            "{},{:.12e},{:.12e},{:.12e},{:.12e}",
            r.player, r.gradient_objective, r.grid_objective, r.objective_gap, r.sup_gap
        );
    }
    print!("{table}");
    dir.csv("oracle.csv", &table)?;
    dir.json("oracle.json", &json!({ "grid_step": grid_step, "admissible": set, "rows": rows }))?;
    println!("outputs written to {}", dir.path().display());
    Ok(0)
}
