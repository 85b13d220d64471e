//! Game specification and exact evaluation of the cost functionals on the tree.
//!
//! For player `i` and profile `A`,
//!
//! ```text
//! J^i(A) = E[ Σ_{m<M} h^i(L_m, A_m) Δt_m + g^i(L_T, A_T) + Σ_nodes f^i · ΔA^i ]
//! ```
//!
//! where the running cost uses the left endpoint of each interval and the
//! price term includes the time-0 jump stored at the root.

use thiserror::Error;

use crate::cost_models::{CostError, CostFamily, CostPoint};
use crate::scenario_tree::{AdaptedProcess, ScenarioTree, TreeError};

/// Tolerance on increments below which a profile still counts as monotone.
pub const ADMISSIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("inadmissible strategy for player {player}: increment {increment:.3e} at node {node}")]
    Inadmissible { player: usize, node: usize, increment: f64 },
    #[error("invalid game: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct GameSpec {
    pub tree: ScenarioTree,
    pub players: usize,
    pub dim: usize,
    /// Running costs `h^i`, one per player.
    pub running: Vec<CostFamily>,
    /// Terminal costs `g^i`, one per player.
    pub terminal: Vec<CostFamily>,
    /// Control prices `f`, `N·d` coordinates laid out player-major.
    pub price: AdaptedProcess,
    /// Exogenous state `L`.
    pub exogenous: AdaptedProcess,
    pub fuel_cap: Option<f64>,
    pub lipschitz_n: Option<f64>,
    /// Optional `ρ |A_T^i|²` added to every player's terminal cost (0 by default).
    pub tikhonov: f64,
}

impl GameSpec {
    pub fn new(
        tree: ScenarioTree,
        dim: usize,
        running: Vec<CostFamily>,
        terminal: Vec<CostFamily>,
        price: AdaptedProcess,
        exogenous: AdaptedProcess,
    ) -> Result<Self, GameError> {
        let players = running.len();
        if players < 1 || terminal.len() != players {
            return Err(GameError::Invalid(format!(
                "{} running and {} terminal cost families",
                running.len(),
                terminal.len()
            )));
        }
        if dim < 1 {
            return Err(GameError::Invalid("control dimension must be positive".into()));
        }
        price.check_fits(&tree)?;
        exogenous.check_fits(&tree)?;
        if price.dims() != players * dim {
            return Err(GameError::Invalid(format!(
                "price has {} coordinates, expected N·d = {}",
                price.dims(),
                players * dim
            )));
        }
        if let Some(v) = price.values().iter().find(|v| !(**v >= 0.0)) {
            return Err(GameError::Invalid(format!("control price must be nonnegative, found {v}")));
        }
        Ok(Self {
            tree,
            players,
            dim,
            running,
            terminal,
            price,
            exogenous,
            fuel_cap: None,
            lipschitz_n: None,
            tikhonov: 0.0,
        })
    }

    /// Smallest price over all nodes, players and coordinates.
    pub fn price_floor(&self) -> f64 {
        self.price.values().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `f ≥ c` everywhere.
    pub fn satisfies_price_floor(&self, c: f64) -> bool {
        self.price_floor() >= c
    }

    pub fn zero_profile(&self) -> Vec<AdaptedProcess> {
        vec![AdaptedProcess::zeros(&self.tree, self.dim); self.players]
    }

    pub fn has_gradients(&self, player: usize) -> bool {
        self.running[player].has_gradient() && self.terminal[player].has_gradient()
    }

    pub(crate) fn check_profile(&self, profile: &[AdaptedProcess]) -> Result<(), GameError> {
        if profile.len() != self.players {
            return Err(GameError::Invalid(format!(
                "profile has {} strategies for {} players",
                profile.len(),
                self.players
            )));
        }
        for (i, s) in profile.iter().enumerate() {
            if s.dims() != self.dim {
                return Err(GameError::Invalid(format!(
                    "strategy {i} has {} coordinates, expected {}",
                    s.dims(),
                    self.dim
                )));
            }
            s.check_fits(&self.tree)?;
            let inc = s.increments(&self.tree);
            if let Some((k, &z)) = inc.values().iter().enumerate().find(|(_, &z)| z < -ADMISSIBILITY_TOL) {
                return Err(GameError::Inadmissible { player: i, node: k / self.dim, increment: z });
            }
        }
        Ok(())
    }

    /// Node-major matrix of profile points, `nodes × (N·d)`.
    pub(crate) fn profile_matrix(&self, profile: &[AdaptedProcess]) -> Vec<f64> {
        let width = self.players * self.dim;
        let mut out = vec![0.0; self.tree.len() * width];
        for (i, s) in profile.iter().enumerate() {
            write_player(&mut out, width, i, self.dim, s.values());
        }
        out
    }
}

pub(crate) fn write_player(matrix: &mut [f64], width: usize, player: usize, dim: usize, levels: &[f64]) {
    for (node, row) in matrix.chunks_mut(width).enumerate() {
        row[player * dim..(player + 1) * dim].copy_from_slice(&levels[node * dim..(node + 1) * dim]);
    }
}

/// Objective of player `i` given the profile matrix and the player's own
/// increments `dz` (node-major, `d` per node).
pub(crate) fn objective(game: &GameSpec, player: usize, matrix: &[f64], dz: &[f64]) -> f64 {
    let tree = &game.tree;
    let d = game.dim;
    let width = game.players * d;
    let steps = tree.steps();
    let mut total = 0.0;
    for id in 0..tree.len() {
        let node = tree.node(id);
        let p = tree.node_prob(id);
        let point = CostPoint { player, dim: d, l: game.exogenous.node(id), a: &matrix[id * width..(id + 1) * width] };
        let mut local = 0.0;
        if node.depth < steps {
            local += game.running[player].eval_unchecked(&point) * tree.dt(node.depth);
        } else {
            local += game.terminal[player].eval_unchecked(&point);
            if game.tikhonov > 0.0 {
                local += game.tikhonov * point.own().iter().map(|x| x * x).sum::<f64>();
            }
        }
        let f = &game.price.node(id)[player * d..(player + 1) * d];
        local += f.iter().zip(&dz[id * d..(id + 1) * d]).map(|(a, b)| a * b).sum::<f64>();
        total += p * local;
    }
    total
}

/// Backward induction for `Ŷ^i`, written into `out` (`nodes × d`).
pub(crate) fn subgradient_into(game: &GameSpec, player: usize, matrix: &[f64], out: &mut [f64]) {
    let tree = &game.tree;
    let d = game.dim;
    let width = game.players * d;
    let steps = tree.steps();
    let mut grad = vec![0.0; d];
    for id in (0..tree.len()).rev() {
        let node = tree.node(id);
        let point = CostPoint { player, dim: d, l: game.exogenous.node(id), a: &matrix[id * width..(id + 1) * width] };
        if node.depth < steps {
            game.running[player].grad_unchecked(&point, &mut grad);
            let dt = tree.dt(node.depth);
            for c in 0..d {
                let mut acc = grad[c] * dt;
                for ch in node.children() {
                    acc += tree.node(ch).branch_prob * out[ch * d + c];
                }
                out[id * d + c] = acc;
            }
        } else {
            game.terminal[player].grad_unchecked(&point, &mut grad);
            for c in 0..d {
                out[id * d + c] = grad[c] + 2.0 * game.tikhonov * point.own()[c];
            }
        }
    }
    // children were read before the price was added to them, so add it last
    let f = &game.price;
    for id in 0..tree.len() {
        for c in 0..d {
            out[id * d + c] += f.node(id)[player * d + c];
        }
    }
}

/// `J^i` of the profile.
pub fn cost(game: &GameSpec, player: usize, profile: &[AdaptedProcess]) -> Result<f64, GameError> {
    game.check_profile(profile)?;
    if player >= game.players {
        return Err(GameError::Invalid(format!("no player {player}")));
    }
    let matrix = game.profile_matrix(profile);
    let dz = profile[player].increments(&game.tree);
    Ok(objective(game, player, &matrix, dz.values()))
}

/// All players' costs.
pub fn costs(game: &GameSpec, profile: &[AdaptedProcess]) -> Result<Vec<f64>, GameError> {
    (0..game.players).map(|i| cost(game, i, profile)).collect()
}

/// `E[f_0·A_0 + Σ_{nodes≠root} f·ΔA]`.
pub fn stieltjes_pair(tree: &ScenarioTree, price: &AdaptedProcess, control: &AdaptedProcess) -> Result<f64, GameError> {
    price.check_fits(tree)?;
    control.check_fits(tree)?;
    if price.dims() != control.dims() {
        return Err(GameError::Invalid(format!(
            "price has {} coordinates, control has {}",
            price.dims(),
            control.dims()
        )));
    }
    let dz = control.increments(tree);
    Ok(tree.weighted_node_sum(|id| price.node(id).iter().zip(dz.node(id)).map(|(f, z)| f * z).sum::<f64>()))
}

/// Adapted projection of the subgradient process of player `i`:
/// `Ŷ_t = E[Σ_{t_m ≥ t} ∇_i h Δt_m + ∇_i g(L_T, A_T) | F_t] + f^i_t`.
pub fn subgradient(game: &GameSpec, player: usize, profile: &[AdaptedProcess]) -> Result<AdaptedProcess, GameError> {
    game.check_profile(profile)?;
    if !game.has_gradients(player) {
        let name = if game.running[player].has_gradient() {
            game.terminal[player].name()
        } else {
            game.running[player].name()
        };
        return Err(CostError::GradientUnavailable(name.to_string()).into());
    }
    let matrix = game.profile_matrix(profile);
    let mut out = AdaptedProcess::zeros(&game.tree, game.dim);
    subgradient_into(game, player, &matrix, out.values_mut());
    Ok(out)
}
