//! Rate-bounded approximation of the monotone-follower game.
//!
//! For an increasing schedule of rates `n` the least equilibrium of the game
//! restricted to `n`-Lipschitz controls is computed and compared with the
//! equilibrium of the unrestricted game.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::best_reply::AdmissibleSet;
use crate::diagnostics::{self, FocReport};
use crate::functional::GameSpec;
use crate::scenario_tree::AdaptedProcess;
use crate::topkis::{self, EquilibriumResult, TopkisError, TopkisOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub topkis: TopkisOptions,
    /// Start each rate from the previous equilibrium instead of zero.
    pub warm_start: bool,
    /// Largest unilateral gain at which a point counts as an equilibrium of its own game.
    pub certify_budget: f64,
    /// Absolute tolerance for the payoff-convergence verdict.
    pub payoff_tol: f64,
    /// Tolerance for the final pseudopath distance verdict.
    pub distance_tol: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            topkis: TopkisOptions::default(),
            warm_start: true,
            certify_budget: 1e-6,
            payoff_tol: 1e-3,
            distance_tol: 1e-2,
        }
    }
}

impl SweepOptions {
    fn slack(&self) -> f64 {
        10.0 * self.topkis.inner.grad_tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n: f64,
    pub costs: Vec<f64>,
    /// Gains from deviating within the rate-bounded set itself.
    pub certificate_gaps: Vec<f64>,
    pub certified: bool,
    /// Gains from deviating anywhere in the monotone cone.
    pub epsilon_gaps: Vec<f64>,
    pub foc: FocReport,
    /// Distance of the stacked profile to the previous point's.
    pub pseudopath_dist: Option<f64>,
    pub iterations: usize,
    #[serde(skip)]
    pub profile: Vec<AdaptedProcess>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepVerdicts {
    pub neg_part_mass_nonincreasing: bool,
    pub payoff_gap_nonincreasing: bool,
    pub payoff_converged: bool,
    pub epsilon_gap_nonincreasing: bool,
    pub distances_nonincreasing: bool,
    pub distance_below_tol: bool,
    /// Set when successive distances fail to shrink.
    pub non_cauchy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointFailure {
    pub n: f64,
    pub message: String,
    pub coercivity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub schedule: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub limit_costs: Vec<f64>,
    pub limit_iterations: usize,
    #[serde(skip)]
    pub limit_profile: Vec<AdaptedProcess>,
    pub verdicts: SweepVerdicts,
    pub failures: Vec<PointFailure>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("monotone-follower equilibrium failed: {0}")]
    Limit(TopkisError),
}

pub fn validate_schedule(schedule: &[f64]) -> Result<(), SweepError> {
    if schedule.len() < 2 {
        return Err(SweepError::Schedule("need at least two rates".into()));
    }
    if let Some(n) = schedule.iter().find(|n| !(**n > 0.0) || !n.is_finite()) {
        return Err(SweepError::Schedule(format!("rate {n} is not positive")));
    }
    if let Some(w) = schedule.windows(2).find(|w| w[1] <= w[0]) {
        return Err(SweepError::Schedule(format!("{} does not exceed {}", w[1], w[0])));
    }
    Ok(())
}

fn nonincreasing(values: &[f64], slack: f64) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] + slack)
}

pub fn run_sweep(game: &GameSpec, schedule: &[f64], opts: &SweepOptions) -> Result<SweepReport, SweepError> {
    validate_schedule(schedule)?;
    let limit = topkis::solve_least(game, &AdmissibleSet::monotone(), &opts.topkis).map_err(SweepError::Limit)?;
    let inner = &opts.topkis.inner;

    let mut points: Vec<SweepPoint> = Vec::new();
    let mut failures = Vec::new();
    for &n in schedule {
        let set = AdmissibleSet::lipschitz(n);
        let solved: Result<EquilibriumResult, TopkisError> = match points.last() {
            Some(prev) if opts.warm_start => topkis::solve_from(game, &set, &opts.topkis, prev.profile.clone()),
            _ => topkis::solve_least(game, &set, &opts.topkis),
        };
        let eq = match solved {
            Ok(eq) => eq,
            Err(e) => {
                failures.push(PointFailure { n, coercivity: e.is_coercivity_failure(), message: e.to_string() });
                continue;
            }
        };
        let evaluated = (|| -> Result<SweepPoint, String> {
            let cert = topkis::certify_equilibrium(game, &set, &eq.profile, opts.certify_budget, inner)
                .map_err(|e| e.to_string())?;
            let epsilon_gaps = diagnostics::epsilon_nash_gap(game, &eq.profile, inner).map_err(|e| e.to_string())?;
            let foc = diagnostics::foc_report(game, &eq.profile, &set).map_err(|e| e.to_string())?;
            let pseudopath_dist = match points.last() {
                Some(prev) => {
                    let a = AdaptedProcess::stack(&prev.profile.iter().collect::<Vec<_>>());
                    let b = AdaptedProcess::stack(&eq.profile.iter().collect::<Vec<_>>());
                    Some(diagnostics::pseudopath_distance(&game.tree, &a, &b, true).map_err(|e| e.to_string())?)
                }
                None => None,
            };
            Ok(SweepPoint {
                n,
                costs: eq.costs.clone(),
                certificate_gaps: cert.gaps,
                certified: cert.certified,
                epsilon_gaps,
                foc,
                pseudopath_dist,
                iterations: eq.iterations,
                profile: eq.profile.clone(),
            })
        })();
        match evaluated {
            Ok(p) => points.push(p),
            Err(message) => failures.push(PointFailure { n, message, coercivity: false }),
        }
    }

    let verdicts = verdicts(&points, &limit.costs, opts);
    Ok(SweepReport {
        schedule: schedule.to_vec(),
        points,
        limit_costs: limit.costs,
        limit_iterations: limit.iterations,
        limit_profile: limit.profile,
        verdicts,
        failures,
    })
}

fn verdicts(points: &[SweepPoint], limit_costs: &[f64], opts: &SweepOptions) -> SweepVerdicts {
    let slack = opts.slack();
    let players = limit_costs.len();
    let per_player = |f: &dyn Fn(&SweepPoint, usize) -> f64| -> bool {
        (0..players).all(|i| nonincreasing(&points.iter().map(|p| f(p, i)).collect::<Vec<_>>(), slack))
    };
    let neg = per_player(&|p, i| p.foc.players[i].neg_part_mass);
    let payoff = per_player(&|p, i| (p.costs[i] - limit_costs[i]).abs());
    let payoff_converged =
        points.last().is_some_and(|p| p.costs.iter().zip(limit_costs).all(|(c, l)| (c - l).abs() <= opts.payoff_tol));
    let gaps = per_player(&|p, i| p.epsilon_gaps[i]);
    let dists: Vec<f64> = points.iter().filter_map(|p| p.pseudopath_dist).collect();
    let dist_ok = nonincreasing(&dists, 1e-12);
    SweepVerdicts {
        neg_part_mass_nonincreasing: neg,
        payoff_gap_nonincreasing: payoff,
        payoff_converged,
        epsilon_gap_nonincreasing: gaps,
        distances_nonincreasing: dist_ok,
        distance_below_tol: dists.last().is_some_and(|d| *d <= opts.distance_tol),
        non_cauchy: !dist_ok,
    }
}

impl SweepReport {
    /// Long-format table `n,player,cost,gap,neg_part_mass,pseudopath_dist`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,player,cost,gap,neg_part_mass,pseudopath_dist\n");
        for p in &self.points {
            for (i, cost) in p.costs.iter().enumerate() {
                let dist = p.pseudopath_dist.map_or(String::new(), |d| format!("{d:.12e}"));
                let _ = writeln!(
                    out,
                    "{},{},{:.12e},{:.12e},{:.12e},{}",
                    p.n, i, cost, p.epsilon_gaps[i], p.foc.players[i].neg_part_mass, dist
                );
            }
        }
        out
    }

    pub fn max_gap_at(&self, index: usize) -> Option<f64> {
        self.points.get(index).map(|p| p.epsilon_gaps.iter().copied().fold(0.0, f64::max))
    }
}
