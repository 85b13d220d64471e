//! Best-reply iteration on the strategy lattice.
//!
//! Starting from the zero profile, `R^{k+1} = R(R^k)` is nondecreasing when
//! the game is submodular and converges to the least Nash equilibrium.
//! Starting from the top of a bounded set, the iterates are nonincreasing
//! and converge to the greatest one; this second direction goes beyond the
//! classical algorithm and is offered as a diagnostic.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::best_reply::{best_reply_from, AdmissibleSet, BestReplyError, SolverOptions};
use crate::functional::{self, GameError, GameSpec};
use crate::scenario_tree::AdaptedProcess;

#[derive(Debug, Clone, PartialEq)]
pub struct TopkisOptions {
    /// Stop once no level moves by more than this between two iterates.
    pub outer_tol: f64,
    pub max_outer: usize,
    pub inner: SolverOptions,
    /// First inner tolerance; it is halved every outer step down to
    /// `inner.grad_tol`. `None` solves every step at `inner.grad_tol`.
    pub inner_tol_start: Option<f64>,
}

impl Default for TopkisOptions {
    fn default() -> Self {
        Self { outer_tol: 1e-8, max_outer: 500, inner: SolverOptions::default(), inner_tol_start: None }
    }
}

impl TopkisOptions {
    fn inner_tol(&self, step: usize) -> f64 {
        let floor = self.inner.grad_tol;
        match self.inner_tol_start {
            Some(start) => (start * 0.5f64.powi(step.min(1000) as i32)).max(floor),
            None => floor,
        }
    }

    fn validate(&self) -> Result<(), GameError> {
        self.inner.validate()?;
        if !(self.outer_tol > 0.0) || self.max_outer < 1 {
            return Err(GameError::Invalid("need outer_tol > 0 and max_outer ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Upward,
    Downward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxOuter,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub player: usize,
    pub sup_change: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityCertificate {
    pub holds: bool,
    /// Largest step against the expected direction before clipping.
    pub worst_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub profile: Vec<AdaptedProcess>,
    pub costs: Vec<f64>,
    /// Number of best-reply map applications.
    pub iterations: usize,
    /// Sup-norm change produced by each application.
    pub changes: Vec<f64>,
    pub monotonicity: MonotonicityCertificate,
    pub termination: Termination,
    pub direction: Direction,
    pub trace: Vec<TraceRow>,
}

impl EquilibriumResult {
    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }
}

/// Trace table `step,player,sup_change,cost`.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("step,player,sup_change,cost\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.12e},{:.12e}", r.step, r.player, r.sup_change, r.cost);
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopkisError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("best reply of player {player} failed at step {step}: {source}")]
    Reply { step: usize, player: usize, source: BestReplyError, trace: Vec<TraceRow> },
    #[error(
        "monotonicity violated beyond tolerance at step {step}: player {player}, node {node}, \
         violation {violation:.3e} > {slack:.3e}"
    )]
    Monotonicity { step: usize, player: usize, node: usize, violation: f64, slack: f64 },
    #[error("max_outer exceeded ({iterations} steps, last change {last_change:.3e})")]
    MaxOuter { iterations: usize, last_change: f64, partial: Box<EquilibriumResult> },
    #[error("set has no greatest element; the downward iteration needs a finite cap")]
    Unbounded,
}

impl TopkisError {
    /// Trace rows recorded before the failure.
    pub fn partial_trace(&self) -> &[TraceRow] {
        match self {
            Self::Reply { trace, .. } => trace,
            Self::MaxOuter { partial, .. } => &partial.trace,
            _ => &[],
        }
    }

    pub fn is_coercivity_failure(&self) -> bool {
        matches!(self, Self::Reply { source: BestReplyError::Divergence { .. }, .. })
    }
}

/// Least Nash equilibrium by iteration from the zero profile.
pub fn solve_least(
    game: &GameSpec,
    set: &AdmissibleSet,
    opts: &TopkisOptions,
) -> Result<EquilibriumResult, TopkisError> {
    iterate(game, set, opts, game.zero_profile(), Direction::Upward)
}

/// Greatest Nash equilibrium by iteration from the top of a bounded set.
pub fn solve_greatest(
    game: &GameSpec,
    set: &AdmissibleSet,
    opts: &TopkisOptions,
) -> Result<EquilibriumResult, TopkisError> {
    let top = set.top_element(&game.tree, game.dim).ok_or(TopkisError::Unbounded)?;
    iterate(game, set, opts, vec![top; game.players], Direction::Downward)
}

/// Upward iteration from a supplied starting profile. The iterates are only
/// guaranteed monotone when `start` lies below its own image, so the
/// monotonicity check is reported but not enforced.
pub fn solve_from(
    game: &GameSpec,
    set: &AdmissibleSet,
    opts: &TopkisOptions,
    start: Vec<AdaptedProcess>,
) -> Result<EquilibriumResult, TopkisError> {
    run(game, set, opts, start, Direction::Upward, false)
}

fn iterate(
    game: &GameSpec,
    set: &AdmissibleSet,
    opts: &TopkisOptions,
    start: Vec<AdaptedProcess>,
    direction: Direction,
) -> Result<EquilibriumResult, TopkisError> {
    run(game, set, opts, start, direction, true)
}

fn run(
    game: &GameSpec,
    set: &AdmissibleSet,
    opts: &TopkisOptions,
    start: Vec<AdaptedProcess>,
    direction: Direction,
    enforce: bool,
) -> Result<EquilibriumResult, TopkisError> {
    opts.validate()?;
    set.validate()?;
    let mut current = start;
    let mut changes = Vec::new();
    let mut trace = Vec::new();
    let mut worst: f64 = 0.0;
    let mut holds = true;

    for step in 1..=opts.max_outer {
        let tol = opts.inner_tol(step - 1);
        let slack = 2.0 * tol;
        let inner = opts.inner.with_tol(tol);
        let mut next = Vec::with_capacity(game.players);
        for player in 0..game.players {
            let reply = best_reply_from(game, player, &current, set, &inner).map_err(|source| TopkisError::Reply {
                step,
                player,
                source,
                trace: trace.clone(),
            })?;
            next.push(reply.strategy);
        }
        let mut step_change: f64 = 0.0;
        let mut player_change = vec![0.0f64; game.players];
        for (player, (new, old)) in next.iter_mut().zip(&current).enumerate() {
            for (k, (v, o)) in new.values_mut().iter_mut().zip(old.values()).enumerate() {
                let against = match direction {
                    Direction::Upward => o - *v,
                    Direction::Downward => *v - o,
                };
                if against > 0.0 {
                    worst = worst.max(against);
                    if against > slack {
                        holds = false;
                        if enforce {
                            return Err(TopkisError::Monotonicity {
                                step,
                                player,
                                node: k / game.dim,
                                violation: against,
                                slack,
                            });
                        }
                    } else if enforce {
                        *v = *o;
                    }
                }
                player_change[player] = player_change[player].max((*v - o).abs());
            }
            step_change = step_change.max(player_change[player]);
        }
        let costs = functional::costs(game, &next)?;
        for player in 0..game.players {
            trace.push(TraceRow { step, player, sup_change: player_change[player], cost: costs[player] });
        }
        changes.push(step_change);
        current = next;
        let at_floor = tol <= opts.inner.grad_tol;
        if step_change <= opts.outer_tol && at_floor {
            return Ok(EquilibriumResult {
                profile: current,
                costs,
                iterations: step,
                changes,
                monotonicity: MonotonicityCertificate { holds, worst_violation: worst },
                termination: Termination::Converged,
                direction,
                trace,
            });
        }
    }
    let costs = functional::costs(game, &current)?;
    let last_change = changes.last().copied().unwrap_or(f64::INFINITY);
    let partial = EquilibriumResult {
        profile: current,
        costs,
        iterations: opts.max_outer,
        changes,
        monotonicity: MonotonicityCertificate { holds, worst_violation: worst },
        termination: Termination::MaxOuter,
        direction,
        trace,
    };
    Err(TopkisError::MaxOuter { iterations: opts.max_outer, last_change, partial: Box::new(partial) })
}

/// One application of the best-reply map, each reply warm-started from the
/// player's current strategy.
pub fn best_reply_map(
    game: &GameSpec,
    set: &AdmissibleSet,
    profile: &[AdaptedProcess],
    opts: &SolverOptions,
) -> Result<Vec<AdaptedProcess>, BestReplyError> {
    (0..game.players).map(|i| best_reply_from(game, i, profile, set, opts).map(|r| r.strategy)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumCertificate {
    pub costs: Vec<f64>,
    pub deviation_costs: Vec<f64>,
    /// `J^i(profile) − J^i(best deviation)` for each player.
    pub gaps: Vec<f64>,
    pub max_gap: f64,
    pub budget: f64,
    pub certified: bool,
}

/// Per-player gains from the best unilateral deviation within `set`.
///
/// Each deviation is computed from the profile itself, so the solver can
/// only improve on it and the gaps are nonnegative up to round-off.
pub fn certify_equilibrium(
    game: &GameSpec,
    set: &AdmissibleSet,
    profile: &[AdaptedProcess],
    budget: f64,
    opts: &SolverOptions,
) -> Result<EquilibriumCertificate, BestReplyError> {
    let tight = opts.with_tol(opts.grad_tol.min(1e-10));
    let costs = functional::costs(game, profile)?;
    let mut deviation_costs = Vec::with_capacity(game.players);
    for (i, &cost) in costs.iter().enumerate() {
        let reply = match best_reply_from(game, i, profile, set, &tight) {
            Ok(r) => r,
            // polishing below the default tolerance may stall on round-off
            Err(BestReplyError::MaxIters { best, .. }) => *best,
            Err(e) => return Err(e),
        };
        deviation_costs.push(reply.objective.min(cost));
    }
    let gaps: Vec<f64> = costs.iter().zip(&deviation_costs).map(|(c, d)| c - d).collect();
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    Ok(EquilibriumCertificate { costs, deviation_costs, gaps, max_gap, budget, certified: max_gap <= budget })
}
