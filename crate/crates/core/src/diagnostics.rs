//! First-order conditions, ε-Nash gaps and path distances.

use serde::Serialize;

use crate::best_reply::{AdmissibleSet, BestReplyError, SolverOptions};
use crate::functional::{self, GameError, GameSpec};
use crate::scenario_tree::{AdaptedProcess, ScenarioTree, TreeError};
use crate::topkis;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlayerFoc {
    pub player: usize,
    /// `E[Σ_ν Σ_ℓ (Ŷ^ℓ_ν)^− Δt_ν]` over non-root nodes.
    pub neg_part_mass: f64,
    /// `E[Σ_ν Ŷ_ν · ΔA_ν]`.
    pub slackness: f64,
    /// `|slackness + n · neg_part_mass|`, present for rate-bounded sets.
    pub lipschitz_identity_gap: Option<f64>,
    pub min_subgradient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FocReport {
    pub rate: Option<f64>,
    pub players: Vec<PlayerFoc>,
}

impl FocReport {
    pub fn max_neg_part_mass(&self) -> f64 {
        self.players.iter().map(|p| p.neg_part_mass).fold(0.0, f64::max)
    }

    pub fn max_identity_gap(&self) -> Option<f64> {
        self.players.iter().map(|p| p.lipschitz_identity_gap).try_fold(0.0, |m, g| g.map(|g| f64::max(m, g)))
    }

    pub fn min_subgradient(&self) -> f64 {
        self.players.iter().map(|p| p.min_subgradient).fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_slackness(&self) -> f64 {
        self.players.iter().map(|p| p.slackness.abs()).fold(0.0, f64::max)
    }
}

pub fn foc_report(game: &GameSpec, profile: &[AdaptedProcess], set: &AdmissibleSet) -> Result<FocReport, GameError> {
    let tree = &game.tree;
    let rate = match *set {
        AdmissibleSet::Lipschitz { rate } => Some(rate),
        AdmissibleSet::Monotone { .. } => None,
    };
    let mut players = Vec::with_capacity(game.players);
    for (i, control) in profile.iter().enumerate() {
        let y = functional::subgradient(game, i, profile)?;
        let dz = control.increments(tree);
        let mut neg = 0.0;
        let mut slack = 0.0;
        for id in 0..tree.len() {
            let p = tree.node_prob(id);
            let yv = y.node(id);
            slack += p * yv.iter().zip(dz.node(id)).map(|(a, b)| a * b).sum::<f64>();
            if id != 0 {
                neg += p * yv.iter().map(|v| (-v).max(0.0)).sum::<f64>() * tree.dt_into(id);
            }
        }
        let min_subgradient = y.values().iter().copied().fold(f64::INFINITY, f64::min);
        players.push(PlayerFoc {
            player: i,
            neg_part_mass: neg,
            slackness: slack,
            lipschitz_identity_gap: rate.map(|n| (slack + n * neg).abs()),
            min_subgradient,
        });
    }
    Ok(FocReport { rate, players })
}

/// `J^i(profile) − inf_V J^i(V, profile^{−i})` with `V` ranging over the
/// whole monotone cone, whatever set the profile came from.
pub fn epsilon_nash_gap(
    game: &GameSpec,
    profile: &[AdaptedProcess],
    opts: &SolverOptions,
) -> Result<Vec<f64>, BestReplyError> {
    topkis::certify_equilibrium(game, &AdmissibleSet::monotone(), profile, f64::INFINITY, opts).map(|c| c.gaps)
}

fn check_pair(tree: &ScenarioTree, x: &AdaptedProcess, y: &AdaptedProcess) -> Result<(), TreeError> {
    x.check_fits(tree)?;
    y.check_fits(tree)?;
    if x.dims() != y.dims() {
        return Err(TreeError::ShapeMismatch { expected: x.dims(), got: y.dims() });
    }
    Ok(())
}

/// Distance in measure `dt + δ_T`, averaged over scenarios:
/// `E[Σ_m (|x_m − y_m| ∧ 1) Δt_m + (|x_T − y_T| ∧ 1)]`. With `capped =
/// false` the integrand is not truncated at 1.
pub fn pseudopath_distance(
    tree: &ScenarioTree,
    x: &AdaptedProcess,
    y: &AdaptedProcess,
    capped: bool,
) -> Result<f64, TreeError> {
    check_pair(tree, x, y)?;
    let clip = |v: f64| if capped { v.min(1.0) } else { v };
    let dist =
        |id: usize| -> f64 { x.node(id).iter().zip(y.node(id)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() };
    let steps = tree.steps();
    let mut total = 0.0;
    for id in 0..tree.len() {
        let node = tree.node(id);
        let p = tree.node_prob(id);
        if node.depth < steps {
            total += p * clip(dist(id)) * tree.dt(node.depth);
        } else {
            total += p * clip(dist(id));
        }
    }
    Ok(total)
}

/// Conditional expectations `E[X_j | ν]` for every node `ν` at depth ≤ `j`.
fn conditional_at(tree: &ScenarioTree, x: &AdaptedProcess, j: usize) -> Vec<f64> {
    let d = x.dims();
    let mut out = vec![0.0; tree.len() * d];
    for id in tree.nodes_at_depth(j) {
        out[id * d..(id + 1) * d].copy_from_slice(x.node(id));
    }
    for m in (0..j).rev() {
        for id in tree.nodes_at_depth(m) {
            for c in tree.node(id).children() {
                let q = tree.node(c).branch_prob;
                for k in 0..d {
                    out[id * d + k] += q * out[c * d + k];
                }
            }
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Expected size of the predictable move from depth `i` to depth `j`,
/// `E|E[X_j − X_i | F_i]|`, for all `i < j`.
fn conditional_moves(tree: &ScenarioTree, x: &AdaptedProcess) -> Vec<Vec<f64>> {
    let m = tree.steps();
    let d = x.dims();
    let mut moves = vec![vec![0.0; m + 1]; m + 1];
    for j in 1..=m {
        let cond = conditional_at(tree, x, j);
        for (i, row) in moves.iter_mut().enumerate().take(j) {
            row[j] = tree
                .nodes_at_depth(i)
                .map(|id| {
                    let diff: Vec<f64> = (0..d).map(|k| cond[id * d + k] - x.get(id, k)).collect();
                    tree.node_prob(id) * norm(&diff)
                })
                .sum();
        }
    }
    moves
}

fn terminal_mass(tree: &ScenarioTree, x: &AdaptedProcess) -> f64 {
    tree.leaves().map(|id| tree.node_prob(id) * norm(x.node(id))).sum()
}

/// Supremum over partitions `0 = t_0 < … < t_n = T` of the grid of
/// `Σ E|E[X_{t_i} − X_{t_{i−1}} | F_{t_{i−1}}]| + E|X_T|`.
///
/// Dropping either endpoint never increases the sum, so this is also the
/// supremum over arbitrary subpartitions. Computed exactly by dynamic
/// programming over the last partition point.
pub fn conditional_variation(tree: &ScenarioTree, x: &AdaptedProcess) -> Result<f64, TreeError> {
    x.check_fits(tree)?;
    let m = tree.steps();
    let moves = conditional_moves(tree, x);
    let mut best = vec![f64::NEG_INFINITY; m + 1];
    best[0] = 0.0;
    for j in 1..=m {
        best[j] = (0..j).map(|i| best[i] + moves[i][j]).fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(best[m] + terminal_mass(tree, x))
}

/// Same quantity by listing every subset of interior grid times; exponential
/// in the number of steps and meant for cross-checking.
pub fn conditional_variation_enumerated(tree: &ScenarioTree, x: &AdaptedProcess) -> Result<f64, TreeError> {
    x.check_fits(tree)?;
    let m = tree.steps();
    if m > 20 {
        return Err(TreeError::InvalidParameter(format!("{m} steps is too many to enumerate")));
    }
    let moves = conditional_moves(tree, x);
    let interior = m.saturating_sub(1);
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1u32 << interior) {
        let mut points = vec![0];
        points.extend((1..m).filter(|t| mask & (1 << (t - 1)) != 0));
        if m > 0 {
            points.push(m);
        }
        let sum: f64 = points.windows(2).map(|w| moves[w[0]][w[1]]).sum();
        best = best.max(sum);
    }
    Ok(best + terminal_mass(tree, x))
}
