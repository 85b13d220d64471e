//! Best replies `R^i(A) = argmin_V J^i(V, A^{-i})` over monotone controls.
//!
//! The decision variables are the node increments of the player's control,
//! so the monotone cone becomes the box `z ≥ 0` and the `n`-Lipschitz set
//! the box `0 ≤ z_ν ≤ n Δt_ν` with the root jump fixed at zero. The gradient
//! of `J^i` with respect to `z_ν` is `P(ν) Ŷ(ν)`, so iterating with `Ŷ` as the
//! search direction is projected gradient in the probability-weighted metric.
//!
//! A pathwise fuel cap `A_T ≤ w` is enforced by clipping each increment to
//! `[0, w]` and then truncating increments top-down wherever a path would
//! exceed `w`.

use serde::Serialize;
use thiserror::Error;

use crate::functional::{self, GameError, GameSpec};
use crate::scenario_tree::{AdaptedProcess, ScenarioTree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdmissibleSet {
    /// Nondecreasing nonnegative controls, optionally with a pathwise fuel cap.
    Monotone { cap: Option<f64> },
    /// Controls starting at 0 whose rate never exceeds `rate`.
    Lipschitz { rate: f64 },
}

impl AdmissibleSet {
    pub fn monotone() -> Self {
        Self::Monotone { cap: None }
    }

    pub fn fuel(cap: f64) -> Self {
        Self::Monotone { cap: Some(cap) }
    }

    pub fn lipschitz(rate: f64) -> Self {
        Self::Lipschitz { rate }
    }

    pub fn validate(&self) -> Result<(), GameError> {
        match *self {
            Self::Monotone { cap: Some(w) } if !(w >= 0.0) => {
                Err(GameError::Invalid(format!("fuel cap must be nonnegative, got {w}")))
            }
            Self::Lipschitz { rate } if !(rate > 0.0) || !rate.is_finite() => {
                Err(GameError::Invalid(format!("Lipschitz rate must be positive, got {rate}")))
            }
            _ => Ok(()),
        }
    }

    /// Upper bound on the increment at `node` (per coordinate).
    pub fn increment_bound(&self, tree: &ScenarioTree, node: usize) -> f64 {
        match *self {
            Self::Monotone { cap } => cap.unwrap_or(f64::INFINITY),
            Self::Lipschitz { .. } if node == 0 => 0.0,
            Self::Lipschitz { rate } => rate * tree.dt_into(node),
        }
    }

    pub fn fuel_cap(&self) -> Option<f64> {
        match *self {
            Self::Monotone { cap } => cap,
            Self::Lipschitz { .. } => None,
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, Self::Monotone { cap: None })
    }

    /// Largest level any admissible control can reach by time `T`.
    pub fn level_bound(&self, tree: &ScenarioTree) -> Option<f64> {
        match *self {
            Self::Monotone { cap } => cap,
            Self::Lipschitz { rate } => Some(rate * tree.horizon()),
        }
    }

    /// Greatest element of the set, when it exists.
    pub fn top_element(&self, tree: &ScenarioTree, dim: usize) -> Option<AdaptedProcess> {
        match *self {
            Self::Monotone { cap: None } => None,
            Self::Monotone { cap: Some(w) } => Some(AdaptedProcess::constant(tree, &vec![w; dim])),
            Self::Lipschitz { rate } => Some(AdaptedProcess::from_fn(tree, dim, |id, v| {
                v.iter_mut().for_each(|x| *x = rate * tree.time_of(id));
            })),
        }
    }

    pub fn contains(&self, tree: &ScenarioTree, control: &AdaptedProcess, tol: f64) -> bool {
        let dz = control.increments(tree);
        let d = control.dims();
        let boxed = (0..tree.len()).all(|id| {
            let hi = self.increment_bound(tree, id);
            dz.node(id).iter().all(|&z| z >= -tol && z <= hi + tol)
        });
        let capped = match self.fuel_cap() {
            Some(w) => tree.leaves().all(|id| (0..d).all(|c| control.get(id, c) <= w + tol)),
            None => true,
        };
        boxed && capped
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stopping tolerance on the sup-norm of the projected gradient `z − P(z − Ŷ)`.
    pub grad_tol: f64,
    pub initial_step: f64,
    /// Sufficient-decrease factor of the backtracking line search.
    pub armijo: f64,
    pub momentum: bool,
    /// Internal pathwise cap used on the uncapped monotone cone to detect
    /// costs that keep decreasing as the control grows.
    pub divergence_cap: f64,
    /// Share of nodes that must sit at the internal cap with an outward
    /// gradient before the instance is flagged as non-coercive.
    pub saturation_fraction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            grad_tol: 1e-8,
            initial_step: 1.0,
            armijo: 1e-4,
            momentum: false,
            divergence_cap: 100.0,
            saturation_fraction: 0.9,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), GameError> {
        if !(self.grad_tol > 0.0) || self.max_iters < 1 {
            return Err(GameError::Invalid("need grad_tol > 0 and max_iters ≥ 1".into()));
        }
        if !(self.initial_step > 0.0) || !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(GameError::Invalid("need initial_step > 0 and armijo in (0, 1)".into()));
        }
        if !(self.divergence_cap > 0.0) {
            return Err(GameError::Invalid("divergence_cap must be positive".into()));
        }
        Ok(())
    }

    pub fn with_tol(&self, grad_tol: f64) -> Self {
        Self { grad_tol, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestReply {
    pub strategy: AdaptedProcess,
    pub objective: f64,
    pub iterations: usize,
    pub pg_norm: f64,
    /// Objective after every accepted step, starting with the initial point.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BestReplyError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("max_iters exceeded after {iterations} iterations (projected gradient {pg_norm:.3e})")]
    MaxIters { best: Box<BestReply>, iterations: usize, pg_norm: f64 },
    #[error(
        "divergence: player {player} has an outward gradient on {pinned} of {nodes} nodes while the cost \
         keeps decreasing as the control grows; no equilibrium expected, coercivity violated"
    )]
    Divergence { player: usize, pinned: usize, nodes: usize, flagged_nodes: Vec<usize> },
    #[error("search space too large: {candidates} candidate evaluations")]
    SearchSpaceTooLarge { candidates: u128 },
    #[error("oracle unsupported: {0}")]
    OracleUnsupported(String),
}

/// Single-player subproblem with opponents frozen.
///
/// Box-constrained sets are searched over node increments, where the
/// projection is a clamp. Capped monotone sets are searched over levels:
/// there the set is `{0 ≤ A_parent ≤ A_child ≤ w}` and the projection is a
/// tree-ordered isotonic regression followed by a clip.
struct ReplyProblem<'a> {
    game: &'a GameSpec,
    player: usize,
    matrix: Vec<f64>,
    upper: Vec<f64>,
    level_cap: Option<f64>,
    levels: Vec<f64>,
    increments: Vec<f64>,
    raw_grad: Vec<f64>,
}

impl<'a> ReplyProblem<'a> {
    fn new(
        game: &'a GameSpec,
        player: usize,
        profile: &[AdaptedProcess],
        set: &AdmissibleSet,
        internal_cap: f64,
    ) -> Self {
        let tree = &game.tree;
        let d = game.dim;
        let mut upper = vec![0.0; tree.len() * d];
        for id in 0..tree.len() {
            let hi = set.increment_bound(tree, id);
            upper[id * d..(id + 1) * d].iter_mut().for_each(|u| *u = hi);
        }
        let level_cap = match set {
            AdmissibleSet::Monotone { cap: None } => Some(internal_cap),
            other => other.fuel_cap(),
        };
        Self {
            game,
            player,
            matrix: game.profile_matrix(profile),
            upper,
            level_cap,
            levels: vec![0.0; tree.len() * d],
            increments: vec![0.0; tree.len() * d],
            raw_grad: vec![0.0; tree.len() * d],
        }
    }

    fn tree(&self) -> &ScenarioTree {
        &self.game.tree
    }

    /// Search coordinates of `control`.
    fn coordinates(&self, control: &AdaptedProcess) -> Vec<f64> {
        match self.level_cap {
            Some(_) => control.values().to_vec(),
            None => control.increments(self.tree()).values().to_vec(),
        }
    }

    fn project(&self, z: &mut [f64]) {
        match self.level_cap {
            None => {
                for (v, hi) in z.iter_mut().zip(&self.upper) {
                    *v = v.clamp(0.0, *hi);
                }
            }
            Some(w) => {
                let tree = self.tree();
                let d = self.game.dim;
                for c in 0..d {
                    isotonic_on_tree(tree, z, d, c);
                }
                z.iter_mut().for_each(|v| *v = v.clamp(0.0, w));
            }
        }
    }

    fn set_point(&mut self, z: &[f64]) {
        let tree = &self.game.tree;
        let d = self.game.dim;
        for id in 0..tree.len() {
            let parent = tree.node(id).parent;
            for c in 0..d {
                let k = id * d + c;
                let base = parent.map_or(0.0, |p| self.levels[p * d + c]);
                if self.level_cap.is_some() {
                    self.levels[k] = z[k];
                    self.increments[k] = z[k] - base;
                } else {
                    self.increments[k] = z[k];
                    self.levels[k] = base + z[k];
                }
            }
        }
        functional::write_player(&mut self.matrix, self.game.players * d, self.player, d, &self.levels);
    }

    fn value(&mut self, z: &[f64]) -> f64 {
        self.set_point(z);
        functional::objective(self.game, self.player, &self.matrix, &self.increments)
    }

    /// Gradient in the search coordinates at the point last passed to
    /// `value`. Also refreshes the increment subgradient `Ŷ`.
    fn gradient(&mut self, out: &mut [f64]) {
        functional::subgradient_into(self.game, self.player, &self.matrix, &mut self.raw_grad);
        if self.level_cap.is_none() {
            out.copy_from_slice(&self.raw_grad);
            return;
        }
        // ∂/∂A_ν in the p-weighted metric: Ŷ_ν − Σ_c π_c Ŷ_c
        let tree = &self.game.tree;
        let d = self.game.dim;
        out.copy_from_slice(&self.raw_grad);
        for id in 0..tree.len() {
            let p = tree.node_prob(id);
            for child in tree.node(id).children() {
                let pi = tree.node_prob(child) / p;
                for c in 0..d {
                    out[id * d + c] -= pi * self.raw_grad[child * d + c];
                }
            }
        }
    }

    /// `z` with the whole control raised by `shift`.
    fn shifted(&self, z: &[f64], shift: f64) -> Vec<f64> {
        let d = self.game.dim;
        let mut out = z.to_vec();
        match self.level_cap {
            Some(_) => out.iter_mut().for_each(|v| *v += shift),
            None => out[..d].iter_mut().for_each(|v| *v += shift),
        }
        out
    }

    fn pg_norm(&self, z: &[f64], g: &[f64]) -> f64 {
        let mut y: Vec<f64> = z.iter().zip(g).map(|(a, b)| a - b).collect();
        self.project(&mut y);
        z.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn weighted_dot(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.game.dim;
        let tree = self.tree();
        (0..tree.len())
            .map(|id| {
                let s: f64 = (id * d..(id + 1) * d).map(|k| x[k] * y[k]).sum();
                tree.node_prob(id) * s
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    mean: f64,
    id: usize,
}

impl PartialEq for Block {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Block {}

impl PartialOrd for Block {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Block {
    // reversed so that BinaryHeap pops the smallest mean
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.mean.total_cmp(&self.mean).then(other.id.cmp(&self.id))
    }
}

/// Weighted (by node probability) least-squares fit of coordinate `c` of
/// `z` under the order `parent ≤ child`. Leaves-up block pooling: each node
/// absorbs its lowest child block while its own block mean is larger.
pub(crate) fn isotonic_on_tree(tree: &ScenarioTree, z: &mut [f64], d: usize, c: usize) {
    let n = tree.len();
    let mut weight = vec![0.0; n];
    let mut total = vec![0.0; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut heaps: Vec<std::collections::BinaryHeap<Block>> = vec![Default::default(); n];
    for id in (0..n).rev() {
        weight[id] = tree.node_prob(id);
        total[id] = weight[id] * z[id * d + c];
        let mut heap = std::collections::BinaryHeap::new();
        for child in tree.node(id).children() {
            heap.push(Block { mean: total[child] / weight[child], id: child });
        }
        while let Some(&top) = heap.peek() {
            if total[id] / weight[id] <= top.mean {
                break;
            }
            heap.pop();
            weight[id] += weight[top.id];
            total[id] += total[top.id];
            owner[top.id] = id;
            let mut below = std::mem::take(&mut heaps[top.id]);
            if below.len() > heap.len() {
                std::mem::swap(&mut below, &mut heap);
            }
            heap.append(&mut below);
        }
        heaps[id] = heap;
    }
    // owners have smaller ids than the blocks they absorbed
    for id in 0..n {
        let mut r = id;
        while owner[r] != r {
            r = owner[r];
        }
        owner[id] = r;
        z[id * d + c] = total[r] / weight[r];
    }
}

fn check_player(game: &GameSpec, player: usize) -> Result<(), GameError> {
    if player >= game.players {
        return Err(GameError::Invalid(format!("no player {player}")));
    }
    if !game.has_gradients(player) {
        let f = if game.running[player].has_gradient() { &game.terminal[player] } else { &game.running[player] };
        return Err(crate::cost_models::CostError::GradientUnavailable(f.name().to_string()).into());
    }
    Ok(())
}

/// Inserts `own` at position `player` among the opponents.
pub fn assemble_profile(player: usize, own: AdaptedProcess, others: &[AdaptedProcess]) -> Vec<AdaptedProcess> {
    let mut profile = others.to_vec();
    profile.insert(player, own);
    profile
}

/// Best reply of `player` to `others` (the remaining `N − 1` strategies),
/// started from the zero control.
pub fn best_reply(
    game: &GameSpec,
    player: usize,
    others: &[AdaptedProcess],
    set: &AdmissibleSet,
    opts: &SolverOptions,
) -> Result<BestReply, BestReplyError> {
    if others.len() + 1 != game.players {
        return Err(
            GameError::Invalid(format!("{} opponent strategies for {} players", others.len(), game.players)).into()
        );
    }
    let profile = assemble_profile(player, AdaptedProcess::zeros(&game.tree, game.dim), others);
    best_reply_from(game, player, &profile, set, opts)
}

/// Best reply of `player` against `profile`, warm-started from the
/// player's own entry of `profile` (projected onto the set).
pub fn best_reply_from(
    game: &GameSpec,
    player: usize,
    profile: &[AdaptedProcess],
    set: &AdmissibleSet,
    opts: &SolverOptions,
) -> Result<BestReply, BestReplyError> {
    set.validate()?;
    opts.validate()?;
    check_player(game, player)?;
    game.check_profile(profile)?;

    let mut prob = ReplyProblem::new(game, player, profile, set, opts.divergence_cap);
    let n = game.tree.len() * game.dim;
    let mut z = prob.coordinates(&profile[player]);
    prob.project(&mut z);
    let mut value = prob.value(&z);
    let mut grad = vec![0.0; n];
    prob.gradient(&mut grad);

    let mut trace = vec![value];
    let mut step = opts.initial_step;
    let mut prev_z: Option<Vec<f64>> = None;
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut pg = prob.pg_norm(&z, &grad);
    let mut iterations = 0;
    let mut stalled = false;

    while pg > opts.grad_tol && iterations < opts.max_iters {
        iterations += 1;
        let momentum = match (&prev_z, opts.momentum) {
            (Some(prev), true) => {
                let beta = (iterations as f64 - 1.0) / (iterations as f64 + 2.0);
                Some(z.iter().zip(prev).map(|(a, b)| beta * (a - b)).collect::<Vec<_>>())
            }
            _ => None,
        };
        let mut use_momentum = momentum.is_some();
        let mut s = step;
        let accepted = loop {
            for k in 0..n {
                trial[k] = z[k] - s * grad[k];
                if use_momentum {
                    trial[k] += momentum.as_ref().unwrap()[k];
                }
            }
            prob.project(&mut trial);
            let dir: Vec<f64> = trial.iter().zip(&z).map(|(a, b)| a - b).collect();
            if dir.iter().all(|&v| v == 0.0) {
                if use_momentum {
                    use_momentum = false;
                    continue;
                }
                break false;
            }
            let t_value = prob.value(&trial);
            prob.gradient(&mut trial_grad);
            let slope = prob.weighted_dot(&grad, &dir);
            // convexity: a nonpositive slope at the far end certifies descent
            let end_slope = prob.weighted_dot(&trial_grad, &dir);
            let armijo = t_value <= value + opts.armijo * slope.min(0.0);
            if armijo || (end_slope <= 0.0 && t_value <= value + 4.0 * f64::EPSILON * value.abs()) {
                break true;
            }
            if use_momentum {
                use_momentum = false;
                continue;
            }
            s *= 0.5;
            if s < 1e-20 {
                break false;
            }
        };
        if !accepted {
            stalled = true;
            prob.set_point(&z);
            break;
        }
        // Barzilai-Borwein step in the weighted metric for the next trial
        let dz: Vec<f64> = trial.iter().zip(&z).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let curvature = prob.weighted_dot(&dz, &dg);
        step = if curvature > 0.0 {
            (prob.weighted_dot(&dz, &dz) / curvature).clamp(1e-12, 1e12)
        } else {
            (2.0 * s).min(1e12)
        };
        prev_z = Some(std::mem::replace(&mut z, trial.clone()));
        std::mem::swap(&mut grad, &mut trial_grad);
        value = prob.value(&z);
        trace.push(value);
        pg = prob.pg_norm(&z, &grad);
    }

    let strategy = AdaptedProcess::from_values(game.dim, prob.levels.clone());
    if let AdmissibleSet::Monotone { cap: None } = set {
        detect_divergence(&mut prob, &z, value, &grad, player, opts)?;
    }
    let reply = BestReply { strategy, objective: value, iterations, pg_norm: pg, objective_trace: trace };
    if pg > opts.grad_tol && (iterations >= opts.max_iters || stalled) {
        // a stalled line search within round-off of the tolerance is accepted
        if !(stalled && pg <= 100.0 * opts.grad_tol) {
            return Err(BestReplyError::MaxIters { best: Box::new(reply), iterations, pg_norm: pg });
        }
    }
    Ok(reply)
}

/// On the uncapped cone a non-coercive cost shows up either as the iterate
/// running into the internal cap, or as a point where shifting the whole
/// control up by the cap still lowers the cost. Either way the gradient
/// must point outward on most nodes.
fn detect_divergence(
    prob: &mut ReplyProblem<'_>,
    z: &[f64],
    value: f64,
    grad: &[f64],
    player: usize,
    opts: &SolverOptions,
) -> Result<(), BestReplyError> {
    let cap = opts.divergence_cap;
    let d = prob.game.dim;
    let nodes = prob.tree().len();
    prob.value(z);
    let mut scratch = grad.to_vec();
    prob.gradient(&mut scratch);
    let raw = &prob.raw_grad;
    let outward: Vec<usize> = (0..nodes).filter(|&id| (0..d).any(|c| raw[id * d + c] < 0.0)).collect();
    if outward.is_empty() || (outward.len() as f64) < opts.saturation_fraction * nodes as f64 {
        return Ok(());
    }
    let pinned = outward.iter().filter(|&&id| (0..d).any(|c| prob.levels[id * d + c] >= cap * (1.0 - 1e-12))).count();
    let saturated = pinned as f64 >= opts.saturation_fraction * nodes as f64;
    let escaping = {
        let shifted = prob.shifted(z, cap);
        let lower = prob.value(&shifted);
        prob.set_point(z);
        value - lower > 1e-12 * value.abs().max(f64::MIN_POSITIVE)
    };
    if saturated || escaping {
        return Err(BestReplyError::Divergence { player, pinned: outward.len(), nodes, flagged_nodes: outward });
    }
    Ok(())
}

/// Exhaustive minimizer over controls whose levels lie on the grid
/// `{0, h, 2h, ...}`. The search is organised as a dynamic program over
/// (node, parent level) pairs, which visits every grid path exactly once in
/// aggregate. Scalar controls only.
pub fn brute_force_best_reply(
    game: &GameSpec,
    player: usize,
    others: &[AdaptedProcess],
    set: &AdmissibleSet,
    grid_step: f64,
    level_cap: Option<f64>,
) -> Result<BestReply, BestReplyError> {
    set.validate()?;
    if game.dim != 1 {
        return Err(BestReplyError::OracleUnsupported("grid search needs d = 1".into()));
    }
    if !(grid_step > 0.0) {
        return Err(BestReplyError::OracleUnsupported("grid step must be positive".into()));
    }
    if others.len() + 1 != game.players || player >= game.players {
        return Err(GameError::Invalid("opponent count does not match the game".into()).into());
    }
    let tree = &game.tree;
    let top = match (set.level_bound(tree), level_cap) {
        (Some(b), Some(c)) => b.min(c),
        (Some(b), None) => b,
        (None, Some(c)) => c,
        (None, None) => {
            return Err(BestReplyError::OracleUnsupported("uncapped set needs an explicit level cap".into()))
        }
    };
    let levels = (top / grid_step + 1e-9).floor() as usize + 1;
    let window = |id: usize| -> usize {
        let hi = set.increment_bound(tree, id);
        if hi.is_infinite() {
            levels - 1
        } else {
            ((hi / grid_step + 1e-9).floor() as usize).min(levels - 1)
        }
    };
    let candidates: u128 = (0..tree.len()).map(|id| levels as u128 * (window(id) as u128 + 1)).sum();
    if candidates > 10_000_000 {
        return Err(BestReplyError::SearchSpaceTooLarge { candidates });
    }

    let zero = AdaptedProcess::zeros(tree, 1);
    let profile = assemble_profile(player, zero, others);
    game.check_profile(&profile)?;
    let width = game.players;
    let mut matrix = game.profile_matrix(&profile);
    let steps = tree.steps();

    // own-level cost at each node, W_ν(a) = c_ν(a) + Σ_children V_c(a)
    let mut value_below = vec![vec![0.0; levels]; tree.len()];
    let mut choice = vec![vec![0usize; levels]; tree.len()];
    for id in (0..tree.len()).rev() {
        let node = tree.node(id);
        let p = tree.node_prob(id);
        let l = game.exogenous.node(id);
        let mut w = vec![0.0; levels];
        for (k, wk) in w.iter_mut().enumerate() {
            let a = k as f64 * grid_step;
            let row = &mut matrix[id * width..(id + 1) * width];
            row[player] = a;
            let point = crate::cost_models::CostPoint { player, dim: 1, l, a: row };
            let local = if node.depth < steps {
                game.running[player].eval_unchecked(&point) * tree.dt(node.depth)
            } else {
                game.terminal[player].eval_unchecked(&point) + game.tikhonov * a * a
            };
            *wk = p * local + node.children().map(|c| value_below[c][k]).sum::<f64>();
        }
        let f = game.price.node(id)[player];
        let span = window(id);
        for b in 0..levels {
            let mut best = f64::INFINITY;
            let mut arg = b;
            let end = (b + span).min(levels - 1);
            for (k, wk) in w.iter().enumerate().take(end + 1).skip(b) {
                let v = wk + p * f * (k - b) as f64 * grid_step;
                if v < best {
                    best = v;
                    arg = k;
                }
            }
            value_below[id][b] = best;
            choice[id][b] = arg;
        }
    }
    let mut level_idx = vec![0usize; tree.len()];
    for id in 0..tree.len() {
        let parent_idx = tree.node(id).parent.map_or(0, |p| level_idx[p]);
        level_idx[id] = choice[id][parent_idx];
    }
    let strategy = AdaptedProcess::from_values(1, level_idx.iter().map(|&k| k as f64 * grid_step).collect());
    let profile = assemble_profile(player, strategy.clone(), others);
    let objective = functional::cost(game, player, &profile)?;
    Ok(BestReply { strategy, objective, iterations: 0, pg_norm: f64::NAN, objective_trace: vec![objective] })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneReplyReport {
    pub pairs: usize,
    /// Largest `max(R^i(A) − R^i(Ā), 0)` over nodes, coordinates and pairs.
    pub worst_violation: f64,
    /// Whether every supplied pair was ordered `A ≤ Ā`.
    pub ordered_inputs: bool,
}

/// Checks `R^i(A) ≤ R^i(Ā)` on ordered profile pairs `(A, Ā)`.
pub fn monotone_reply_check(
    game: &GameSpec,
    player: usize,
    pairs: &[(Vec<AdaptedProcess>, Vec<AdaptedProcess>)],
    set: &AdmissibleSet,
    opts: &SolverOptions,
) -> Result<MonotoneReplyReport, BestReplyError> {
    let mut worst: f64 = 0.0;
    let mut ordered = true;
    for (low, high) in pairs {
        ordered &= low.iter().zip(high).enumerate().all(|(j, (a, b))| j == player || a.le_with_tol(b, 0.0));
        let r_low = best_reply_from(game, player, low, set, opts)?;
        let r_high = best_reply_from(game, player, high, set, opts)?;
        let v = r_low.strategy.values().iter().zip(r_high.strategy.values()).map(|(a, b)| a - b).fold(0.0, f64::max);
        worst = worst.max(v);
    }
    Ok(MonotoneReplyReport { pairs: pairs.len(), worst_violation: worst, ordered_inputs: ordered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_models::CostFamily;
    use crate::presets;

    fn single(price: f64) -> GameSpec {
        let tree = ScenarioTree::chain(1, 1.0).unwrap();
        presets::symmetric(tree, 1, CostFamily::Zero, CostFamily::quadratic(1.0, 0.0, 1.0), price)
    }

    #[test]
    fn expensive_control_is_not_used() {
        let game = single(3.0);
        let r = best_reply(&game, 0, &[], &AdmissibleSet::fuel(10.0), &SolverOptions::default()).unwrap();
        assert!(r.strategy.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_period_interior_optimum() {
        let game = single(1.0);
        let r = best_reply(&game, 0, &[], &AdmissibleSet::monotone(), &SolverOptions::default()).unwrap();
        assert!((r.strategy.get(1, 0) - 0.5).abs() < 1e-8);
        let grid = brute_force_best_reply(&game, 0, &[], &AdmissibleSet::monotone(), 0.01, Some(2.0)).unwrap();
        assert!((grid.strategy.get(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_fuel_forces_zero() {
        let game = presets::scalar_game(0.5);
        let others = [AdaptedProcess::constant(&game.tree, &[1.0])];
        let set = AdmissibleSet::fuel(0.0);
        let r = best_reply(&game, 0, &others, &set, &SolverOptions::default()).unwrap();
        assert!(r.strategy.values().iter().all(|&v| v == 0.0));
        let g = brute_force_best_reply(&game, 0, &others, &set, 1.0 / 64.0, None).unwrap();
        assert!(g.strategy.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn objective_never_increases() {
        let game = presets::quadratic_game_with(4, 0.5);
        let others = [AdaptedProcess::zeros(&game.tree, 1)];
        let r = best_reply(&game, 1, &others, &AdmissibleSet::monotone(), &SolverOptions::default()).unwrap();
        for w in r.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-14 * w[0].abs());
        }
    }

    #[test]
    fn lipschitz_replies_respect_the_rate() {
        let game = presets::decoupled_game();
        let others = [AdaptedProcess::zeros(&game.tree, 1)];
        let set = AdmissibleSet::lipschitz(1.0);
        let r = best_reply(&game, 0, &others, &set, &SolverOptions::default()).unwrap();
        assert!(set.contains(&game.tree, &r.strategy, 1e-12));
        assert_eq!(r.strategy.get(0, 0), 0.0);
        assert!((r.strategy.get(4, 0) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn exponential_cost_is_flagged() {
        let game = presets::counterexample_game();
        let others = [AdaptedProcess::zeros(&game.tree, 1)];
        let err = best_reply(&game, 0, &others, &AdmissibleSet::monotone(), &SolverOptions::default());
        assert!(matches!(err, Err(BestReplyError::Divergence { player: 0, .. })), "{err:?}");
    }

    #[test]
    fn oversized_grid_is_refused() {
        let game = presets::quadratic_game();
        let others = [AdaptedProcess::zeros(&game.tree, 1)];
        let err = brute_force_best_reply(&game, 0, &others, &AdmissibleSet::fuel(4.0), 1e-3, None);
        assert!(matches!(err, Err(BestReplyError::SearchSpaceTooLarge { .. })));
    }

    #[test]
    fn decoupled_reply_ignores_opponents() {
        let game = presets::decoupled_game();
        let set = AdmissibleSet::monotone();
        let lo = vec![AdaptedProcess::zeros(&game.tree, 1); 2];
        let hi = vec![AdaptedProcess::constant(&game.tree, &[3.0]); 2];
        let rep = monotone_reply_check(&game, 0, &[(lo, hi)], &set, &SolverOptions::default()).unwrap();
        assert!(rep.ordered_inputs);
        assert_eq!(rep.worst_violation, 0.0);
    }

    fn pava(y: &[f64]) -> Vec<f64> {
        let mut blocks: Vec<(f64, usize)> = Vec::new();
        for &v in y {
            blocks.push((v, 1));
            while blocks.len() > 1 && blocks[blocks.len() - 2].0 > blocks[blocks.len() - 1].0 {
                let (b, nb) = blocks.pop().unwrap();
                let (a, na) = blocks.pop().unwrap();
                blocks.push(((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb));
            }
        }
        blocks.iter().flat_map(|&(m, k)| std::iter::repeat_n(m, k)).collect()
    }

    #[test]
    fn isotonic_on_a_chain_is_pava() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let tree = ScenarioTree::chain(9, 0.1).unwrap();
        for _ in 0..50 {
            let y: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut z = y.clone();
            isotonic_on_tree(&tree, &mut z, 1, 0);
            for (a, b) in z.iter().zip(pava(&y)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn capped_projection_satisfies_the_variational_inequality() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let tree = ScenarioTree::binary(4, 0.25, 0.3).unwrap();
        let game = presets::symmetric(tree.clone(), 1, CostFamily::Zero, CostFamily::quadratic(1.0, 0.0, 1.0), 0.0);
        let prob = ReplyProblem::new(&game, 0, &game.zero_profile(), &AdmissibleSet::fuel(1.5), 100.0);
        for _ in 0..50 {
            let y: Vec<f64> = (0..tree.len()).map(|_| rng.gen_range(-1.0..3.0)).collect();
            let mut py = y.clone();
            prob.project(&mut py);
            let ap = AdaptedProcess::from_values(1, py.clone());
            assert!(AdmissibleSet::fuel(1.5).contains(&tree, &ap, 1e-12));
            for _ in 0..20 {
                let mut u: Vec<f64> = (0..tree.len()).map(|_| rng.gen_range(-1.0..3.0)).collect();
                prob.project(&mut u);
                let r: Vec<f64> = y.iter().zip(&py).map(|(a, b)| a - b).collect();
                let v: Vec<f64> = u.iter().zip(&py).map(|(a, b)| a - b).collect();
                assert!(prob.weighted_dot(&r, &v) <= 1e-12);
            }
        }
    }
}
