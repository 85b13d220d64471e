//! Small games used by the examples, the shipped configs and the tests.

use crate::cost_models::{AffineTarget, CostFamily, QuadraticTracking};
use crate::functional::GameSpec;
use crate::scenario_tree::{AdaptedProcess, ScenarioTree};

/// Two players, one period of length `0.1`, `g^i = (a^i − κ a^j − 1)²`,
/// `h = 0`, `f ≡ 1`. Best replies follow `a ↦ max(0, 1/2 + κ a)`.
pub fn scalar_game(kappa: f64) -> GameSpec {
    let tree = ScenarioTree::chain(1, 0.1).expect("valid chain");
    symmetric(tree, 2, CostFamily::Zero, CostFamily::quadratic(1.0, kappa, 1.0), 1.0)
}

/// Two non-interacting players on a deterministic grid of four steps over
/// `[0, 0.5]`, `g = (a − 1)²`, `f ≡ 0.5`; the unconstrained optimum is `0.75`.
pub fn decoupled_game() -> GameSpec {
    let tree = ScenarioTree::chain(4, 0.125).expect("valid chain");
    symmetric(tree, 2, CostFamily::Zero, CostFamily::quadratic(1.0, 0.0, 1.0), 0.5)
}

/// Scalar game with a positive cross effect (`κ = −0.5`), which breaks
/// decreasing differences.
pub fn supermodular_game() -> GameSpec {
    scalar_game(-0.5)
}

/// Player 0 pays `e^{−a^0}(2 − e^{−a^1})` at `T` and nothing else; player 1
/// tracks 1 at price 1. Player 0 can always lower the cost by acting more.
pub fn counterexample_game() -> GameSpec {
    let tree = ScenarioTree::binary(2, 0.5, 0.5).expect("valid tree");
    let price = AdaptedProcess::constant(&tree, &[0.0, 1.0]);
    let l = AdaptedProcess::zeros(&tree, 1);
    GameSpec::new(
        tree,
        1,
        vec![CostFamily::Zero, CostFamily::Zero],
        vec![CostFamily::ExponentialCounterexample, CostFamily::quadratic(1.0, 0.0, 1.0)],
        price,
        l,
    )
    .expect("valid game")
}

/// `g^i = (a^i − 2 a^j − 1/4)²`, `f ≡ 1`: with fuel cap 2 the symmetric
/// equilibria are `0`, `1/4` and `2`.
pub fn multi_equilibrium_game() -> GameSpec {
    let tree = ScenarioTree::chain(1, 0.1).expect("valid chain");
    symmetric(tree, 2, CostFamily::Zero, CostFamily::quadratic(1.0, 2.0, 0.25), 1.0)
}

/// Fuel cap that goes with [`multi_equilibrium_game`].
pub const MULTI_EQUILIBRIUM_CAP: f64 = 2.0;

/// Two players on a binary tree of depth 8 over `[0, 1]` tracking
/// `L_t = t + 0.6 W_t` against each other:
/// `h = (a^i − a^j/2 − L)²`, `g = 2 (a^i − a^j/2 − L)²`, `f ≡ 0.5`.
pub fn quadratic_game() -> GameSpec {
    quadratic_game_with(8, 0.5)
}

pub fn quadratic_game_with(depth: usize, kappa: f64) -> GameSpec {
    let tree = ScenarioTree::binary(depth, 1.0 / depth as f64, 0.5).expect("valid tree");
    let w = tree.brownian(0);
    let l = AdaptedProcess::from_fn(&tree, 1, |id, v| v[0] = tree.time_of(id) + 0.6 * w.get(id, 0));
    let target = AffineTarget { offset: 0.0, slope: vec![1.0] };
    let running = CostFamily::QuadraticTracking(QuadraticTracking::new(1.0, kappa, target.clone()));
    let terminal = CostFamily::QuadraticTracking(QuadraticTracking::new(2.0, kappa, target));
    let price = AdaptedProcess::constant(&tree, &[0.5, 0.5]);
    GameSpec::new(tree, 1, vec![running.clone(), running], vec![terminal.clone(), terminal], price, l)
        .expect("valid game")
}

/// `players` identical players with scalar controls, constant price and a
/// zero exogenous process.
pub fn symmetric(
    tree: ScenarioTree,
    players: usize,
    running: CostFamily,
    terminal: CostFamily,
    price: f64,
) -> GameSpec {
    let f = AdaptedProcess::constant(&tree, &vec![price; players]);
    let l = AdaptedProcess::zeros(&tree, 1);
    GameSpec::new(tree, 1, vec![running; players], vec![terminal; players], f, l).expect("valid game")
}
