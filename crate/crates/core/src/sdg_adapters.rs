//! Singularly controlled linear SDEs as monotone-follower games.
//!
//! Each player controls a scalar state that is either a geometric Brownian
//! motion or an Ornstein-Uhlenbeck process pushed up by `dξ^i`. On the tree
//! both discretise exactly as `X = U + D ζ` with `Δξ = D Δζ`, where `U` is
//! the uncontrolled state and `D > 0` a multiplier process. Costs written in
//! terms of `ζ` keep convexity and decreasing differences, so the game in
//! `ζ` is a monotone-follower game of the standard form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_models::{CostError, CostFamily, CostPoint, GradFn};
use crate::functional::{GameError, GameSpec};
use crate::scenario_tree::{AdaptedProcess, ScenarioTree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    /// `dX = μ X dt + σ X dW + dξ`.
    Gbm { mu: f64, sigma: f64 },
    /// `dX = θ (μ − X) dt + σ dW + dξ`.
    Ou { theta: f64, mu: f64, sigma: f64 },
}

#[derive(Debug, Clone)]
pub struct SdgPlayer {
    pub dynamics: Dynamics,
    pub x0: f64,
    /// Raw costs as functions of `(L, X)`.
    pub running: CostFamily,
    pub terminal: CostFamily,
    /// Tree factor driving this player's Brownian motion.
    pub noise_factor: usize,
}

#[derive(Debug, Clone)]
pub struct SdgSpec {
    pub players: Vec<SdgPlayer>,
    /// Raw control prices, one coordinate per player.
    pub price: AdaptedProcess,
    pub exogenous: AdaptedProcess,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdgError {
    #[error("invalid SDG parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Trees above this size trigger a warning when several noises are used.
pub const PRODUCT_TREE_WARNING: usize = 100_000;

/// `E_t = exp((μ − σ²/2) t + σ W_t)` with `W` built from `factor`.
pub fn gbm_exponential(mu: f64, sigma: f64, tree: &ScenarioTree, factor: usize) -> AdaptedProcess {
    let w = tree.brownian(factor);
    AdaptedProcess::from_fn(tree, 1, |id, v| {
        v[0] = ((mu - 0.5 * sigma * sigma) * tree.time_of(id) + sigma * w.get(id, 0)).exp();
    })
}

/// One step of the uncontrolled dynamics from `parent` into `id`.
fn step(dynamics: &Dynamics, tree: &ScenarioTree, id: usize, factor: usize, x: f64) -> f64 {
    let dt = tree.dt_into(id);
    let shock = tree.shock(id, factor);
    match *dynamics {
        Dynamics::Gbm { mu, sigma } => x * ((mu - 0.5 * sigma * sigma) * dt + sigma * shock * dt.sqrt()).exp(),
        Dynamics::Ou { theta, mu, sigma } => {
            let decay = (-theta * dt).exp();
            let sd = sigma * ((1.0 - (-2.0 * theta * dt).exp()) / (2.0 * theta)).sqrt();
            decay * x + mu * (1.0 - decay) + sd * shock
        }
    }
}

/// Controlled state by forward recursion: `X_0 = x_0 + Δξ_0`,
/// `X_ν = step(X_parent) + Δξ_ν`.
pub fn simulate_state(player: &SdgPlayer, tree: &ScenarioTree, control: &AdaptedProcess) -> AdaptedProcess {
    let dxi = control.increments(tree);
    let mut x = AdaptedProcess::zeros(tree, 1);
    for id in 0..tree.len() {
        let base = match tree.node(id).parent {
            None => player.x0,
            Some(p) => step(&player.dynamics, tree, id, player.noise_factor, x.get(p, 0)),
        };
        x.node_mut(id)[0] = base + dxi.get(id, 0);
    }
    x
}

/// Uncontrolled state `U` and multiplier `D` with `X = U + D ζ`.
pub fn state_maps(player: &SdgPlayer, tree: &ScenarioTree) -> (AdaptedProcess, AdaptedProcess) {
    match player.dynamics {
        Dynamics::Gbm { mu, sigma } => {
            let e = gbm_exponential(mu, sigma, tree, player.noise_factor);
            let u = AdaptedProcess::from_fn(tree, 1, |id, v| v[0] = player.x0 * e.get(id, 0));
            (u, e)
        }
        Dynamics::Ou { theta, .. } => {
            let u = simulate_state(player, tree, &AdaptedProcess::zeros(tree, 1));
            let d = AdaptedProcess::from_fn(tree, 1, |id, v| v[0] = (-theta * tree.time_of(id)).exp());
            (u, d)
        }
    }
}

impl SdgSpec {
    pub fn validate(&self, tree: &ScenarioTree) -> Result<(), SdgError> {
        let n = self.players.len();
        if n == 0 {
            return Err(SdgError::Invalid("no players".into()));
        }
        for (i, p) in self.players.iter().enumerate() {
            if !(p.x0 > 0.0) {
                return Err(SdgError::Invalid(format!("player {i}: x0 must be positive")));
            }
            let (sigma, theta) = match p.dynamics {
                Dynamics::Gbm { sigma, .. } => (sigma, 1.0),
                Dynamics::Ou { theta, sigma, .. } => (sigma, theta),
            };
            if !(sigma >= 0.0) || !(theta > 0.0) {
                return Err(SdgError::Invalid(format!("player {i}: need σ ≥ 0 and θ > 0")));
            }
            if p.noise_factor >= tree.factors() {
                return Err(SdgError::Invalid(format!(
                    "player {i}: noise factor {} but the tree has {} factors",
                    p.noise_factor,
                    tree.factors()
                )));
            }
        }
        self.price.check_fits(tree).map_err(GameError::from)?;
        self.exogenous.check_fits(tree).map_err(GameError::from)?;
        if self.price.dims() != n {
            return Err(SdgError::Invalid(format!("price has {} coordinates for {n} players", self.price.dims())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TransformedGame {
    pub game: GameSpec,
    /// Uncontrolled states, one coordinate per player.
    pub uncontrolled: AdaptedProcess,
    /// Multipliers `D^i`, one coordinate per player.
    pub multiplier: AdaptedProcess,
    pub warnings: Vec<String>,
}

/// Wraps a raw state cost as a cost of the transformed control. The
/// exogenous vector seen by the wrapper is `(L, U^1..U^N, D^1..D^N)`.
fn lift(raw: &CostFamily, players: usize, k: usize) -> Result<CostFamily, SdgError> {
    if !raw.has_gradient() {
        return Err(CostError::GradientUnavailable(raw.name().to_string()).into());
    }
    let states = move |p: &CostPoint<'_>| -> Vec<f64> {
        (0..players).map(|j| p.l[k + j] + p.l[k + players + j] * p.a[j]).collect()
    };
    let value_raw = raw.clone();
    let value = move |p: &CostPoint<'_>| {
        let x = states(p);
        value_raw.eval_unchecked(&CostPoint { player: p.player, dim: 1, l: &p.l[..k], a: &x })
    };
    let grad_raw = raw.clone();
    let gradient: GradFn = std::sync::Arc::new(move |p: &CostPoint<'_>, out: &mut [f64]| {
        let x = states(p);
        grad_raw.grad_unchecked(&CostPoint { player: p.player, dim: 1, l: &p.l[..k], a: &x }, out);
        out[0] *= p.l[k + players + p.player];
    });
    Ok(CostFamily::custom(format!("lifted_{}", raw.name()), value, Some(gradient)))
}

/// Game in the transformed controls `ζ^i`, with `Δξ^i = D^i Δζ^i`.
pub fn transform_game(sdg: &SdgSpec, tree: &ScenarioTree) -> Result<TransformedGame, SdgError> {
    sdg.validate(tree)?;
    let n = sdg.players.len();
    let k = sdg.exogenous.dims();
    let maps: Vec<(AdaptedProcess, AdaptedProcess)> = sdg.players.iter().map(|p| state_maps(p, tree)).collect();
    let uncontrolled = AdaptedProcess::stack(&maps.iter().map(|m| &m.0).collect::<Vec<_>>());
    let multiplier = AdaptedProcess::stack(&maps.iter().map(|m| &m.1).collect::<Vec<_>>());
    let exogenous = AdaptedProcess::stack(&[&sdg.exogenous, &uncontrolled, &multiplier]);
    let price = AdaptedProcess::from_fn(tree, n, |id, v| {
        for (j, x) in v.iter_mut().enumerate() {
            *x = sdg.price.get(id, j) * multiplier.get(id, j);
        }
    });
    let running = sdg.players.iter().map(|p| lift(&p.running, n, k)).collect::<Result<Vec<_>, _>>()?;
    let terminal = sdg.players.iter().map(|p| lift(&p.terminal, n, k)).collect::<Result<Vec<_>, _>>()?;
    let game = GameSpec::new(tree.clone(), 1, running, terminal, price, exogenous)?;
    let mut warnings = Vec::new();
    if tree.factors() > 1 && tree.len() > PRODUCT_TREE_WARNING {
        warnings.push(format!(
            "product tree with {} factors has {} nodes; consider a shallower tree",
            tree.factors(),
            tree.len()
        ));
    }
    Ok(TransformedGame { game, uncontrolled, multiplier, warnings })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappedBack {
    /// Original controls `ξ^i = Σ D^i Δζ^i`.
    pub controls: Vec<AdaptedProcess>,
    /// States rebuilt from `ξ` by the forward recursion.
    pub states: Vec<AdaptedProcess>,
}

pub fn map_back(
    sdg: &SdgSpec,
    tree: &ScenarioTree,
    multiplier: &AdaptedProcess,
    zeta: &[AdaptedProcess],
) -> MappedBack {
    let mut controls = Vec::with_capacity(zeta.len());
    let mut states = Vec::with_capacity(zeta.len());
    for (j, (z, player)) in zeta.iter().zip(&sdg.players).enumerate() {
        let dz = z.increments(tree);
        let dxi = AdaptedProcess::from_fn(tree, 1, |id, v| v[0] = multiplier.get(id, j) * dz.get(id, 0));
        let xi = dxi.cumulate(tree);
        states.push(simulate_state(player, tree, &xi));
        controls.push(xi);
    }
    MappedBack { controls, states }
}

/// Costs of the original game at controls `ξ`, with states simulated
/// forward from `ξ`.
pub fn raw_costs(sdg: &SdgSpec, tree: &ScenarioTree, controls: &[AdaptedProcess]) -> Result<Vec<f64>, SdgError> {
    sdg.validate(tree)?;
    let n = sdg.players.len();
    if controls.len() != n {
        return Err(SdgError::Invalid(format!("{} controls for {n} players", controls.len())));
    }
    let states: Vec<AdaptedProcess> =
        sdg.players.iter().zip(controls).map(|(p, xi)| simulate_state(p, tree, xi)).collect();
    let steps = tree.steps();
    let mut out = Vec::with_capacity(n);
    for (i, player) in sdg.players.iter().enumerate() {
        let dxi = controls[i].increments(tree);
        let mut total = 0.0;
        for id in 0..tree.len() {
            let depth = tree.node(id).depth;
            let x: Vec<f64> = states.iter().map(|s| s.get(id, 0)).collect();
            let l = sdg.exogenous.node(id);
            let local = if depth < steps {
                player.running.eval(i, 1, l, &x)? * tree.dt(depth)
            } else {
                player.terminal.eval(i, 1, l, &x)?
            };
            total += tree.node_prob(id) * (local + sdg.price.get(id, i) * dxi.get(id, 0));
        }
        out.push(total);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional;

    fn spec(tree: &ScenarioTree, dynamics: [Dynamics; 2]) -> SdgSpec {
        let players = dynamics
            .iter()
            .enumerate()
            .map(|(i, d)| SdgPlayer {
                dynamics: *d,
                x0: 1.0,
                running: CostFamily::quadratic(1.0, 0.5, 1.5),
                terminal: CostFamily::quadratic(2.0, 0.5, 1.5),
                noise_factor: i.min(tree.factors() - 1),
            })
            .collect();
        SdgSpec {
            players,
            price: AdaptedProcess::constant(tree, &[0.3, 0.4]),
            exogenous: AdaptedProcess::zeros(tree, 1),
        }
    }

    #[test]
    fn exponential_special_cases() {
        let tree = ScenarioTree::binary(3, 0.25, 0.5).unwrap();
        let e = gbm_exponential(0.0, 0.0, &tree, 0);
        assert!(e.values().iter().all(|&v| v == 1.0));
        let e = gbm_exponential(0.3, 0.0, &tree, 0);
        for id in 0..tree.len() {
            assert!((e.get(id, 0) - (0.3 * tree.time_of(id)).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_transform_when_multiplier_is_one() {
        let tree = ScenarioTree::binary(2, 0.5, 0.5).unwrap();
        let flat = Dynamics::Gbm { mu: 0.0, sigma: 0.0 };
        let sdg = spec(&tree, [flat, flat]);
        let t = transform_game(&sdg, &tree).unwrap();
        let zeta = vec![AdaptedProcess::from_fn(&tree, 1, |id, v| v[0] = tree.time_of(id)); 2];
        let back = map_back(&sdg, &tree, &t.multiplier, &zeta);
        assert_eq!(back.controls, zeta);
        let lifted = functional::costs(&t.game, &zeta).unwrap();
        let raw = raw_costs(&sdg, &tree, &back.controls).unwrap();
        for (a, b) in lifted.iter().zip(&raw) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_control_maps_to_free_state() {
        let tree = ScenarioTree::product(2, 0.5, 2, 0.5).unwrap();
        let sdg =
            spec(&tree, [Dynamics::Gbm { mu: 0.1, sigma: 0.2 }, Dynamics::Ou { theta: 0.7, mu: 1.0, sigma: 0.3 }]);
        let t = transform_game(&sdg, &tree).unwrap();
        let back = map_back(&sdg, &tree, &t.multiplier, &t.game.zero_profile());
        for j in 0..2 {
            assert!(back.controls[j].values().iter().all(|&v| v == 0.0));
            for id in 0..tree.len() {
                assert!((back.states[j].get(id, 0) - t.uncontrolled.get(id, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let tree = ScenarioTree::binary(2, 0.5, 0.5).unwrap();
        let mut sdg = spec(&tree, [Dynamics::Ou { theta: 0.0, mu: 0.0, sigma: 0.1 }; 2]);
        assert!(transform_game(&sdg, &tree).is_err());
        sdg.players[0].dynamics = Dynamics::Gbm { mu: 0.0, sigma: 0.1 };
        sdg.players[1].dynamics = Dynamics::Gbm { mu: 0.0, sigma: 0.1 };
        sdg.players[1].x0 = 0.0;
        assert!(transform_game(&sdg, &tree).is_err());
    }
}
