use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfgame::best_reply::{
    assemble_profile, best_reply, brute_force_best_reply, AdmissibleSet, BestReplyError, SolverOptions,
};
use mfgame::cost_models::{AffineTarget, CostFamily, QuadraticTracking};
use mfgame::diagnostics::{
    conditional_variation, conditional_variation_enumerated, epsilon_nash_gap, pseudopath_distance,
};
use mfgame::functional::{self, GameSpec};
use mfgame::presets;
use mfgame::scenario_tree::{AdaptedProcess, ScenarioTree};
use mfgame::sdg_adapters::{self, Dynamics, SdgPlayer, SdgSpec};
use mfgame::topkis::{self, TopkisOptions};

fn random_control(tree: &ScenarioTree, rng: &mut ChaCha8Rng, max_step: f64) -> AdaptedProcess {
    AdaptedProcess::from_values(1, (0..tree.len()).map(|_| rng.gen_range(0.0..max_step)).collect()).cumulate(tree)
}

fn random_tracking_game(rng: &mut ChaCha8Rng, depth: usize) -> GameSpec {
    let tree = ScenarioTree::binary(depth, 1.0 / depth as f64, rng.gen_range(0.2..0.8)).unwrap();
    let w = tree.brownian(0);
    let vol = rng.gen_range(0.0..1.0);
    let l = AdaptedProcess::from_fn(&tree, 1, |id, v| v[0] = 0.5 + tree.time_of(id) + vol * w.get(id, 0));
    let kappa = rng.gen_range(0.0..0.9);
    let target = AffineTarget { offset: rng.gen_range(-0.2..0.5), slope: vec![1.0] };
    let h = CostFamily::QuadraticTracking(QuadraticTracking::new(rng.gen_range(0.5..2.0), kappa, target.clone()));
    let g = CostFamily::QuadraticTracking(QuadraticTracking::new(rng.gen_range(0.5..3.0), kappa, target));
    let f = rng.gen_range(0.0..0.8);
    GameSpec::new(tree.clone(), 1, vec![h.clone(), h], vec![g.clone(), g], AdaptedProcess::constant(&tree, &[f, f]), l)
        .unwrap()
}

#[test]
fn gradient_solver_agrees_with_grid_search_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = 1.0 / 64.0;
    for case in 0..6 {
        let game = random_tracking_game(&mut rng, 2);
        let others = [random_control(&game.tree, &mut rng, 0.6)];
        let set = match case % 3 {
            0 => AdmissibleSet::fuel(1.5),
            1 => AdmissibleSet::lipschitz(3.0),
            _ => AdmissibleSet::monotone(),
        };
        let pg = best_reply(&game, 0, &others, &set, &SolverOptions::default()).unwrap();
        let grid = brute_force_best_reply(&game, 0, &others, &set, h, Some(3.0)).unwrap();
        assert!(pg.strategy.sup_distance(&grid.strategy) <= h, "case {case}");
        assert!(pg.objective <= grid.objective + 1e-10, "case {case}");
        assert!(grid.objective - pg.objective <= 1e-3, "case {case}");
        assert!(set.contains(&game.tree, &grid.strategy, 1e-12));
    }
}

#[test]
fn grid_search_rejects_oversized_problems() {
    let game = presets::quadratic_game_with(6, 0.5);
    let others = [AdaptedProcess::zeros(&game.tree, 1)];
    let err = brute_force_best_reply(&game, 0, &others, &AdmissibleSet::fuel(4.0), 1e-3, None).unwrap_err();
    assert!(matches!(err, BestReplyError::SearchSpaceTooLarge { .. }));
}

#[test]
fn one_period_equilibrium_has_closed_form() {
    // (a − κb − 1)² + a is minimised at a = κb + 1/2, so a* = 1 / (2(1 − κ))
    for kappa in [0.0, 0.25, 0.5, 0.75] {
        let game = presets::scalar_game(kappa);
        let eq = topkis::solve_least(&game, &AdmissibleSet::monotone(), &TopkisOptions::default()).unwrap();
        let expect = 0.5 / (1.0 - kappa);
        for p in &eq.profile {
            assert_abs_diff_eq!(p.get(1, 0), expect, epsilon = 1e-6);
        }
    }
}

#[test]
fn piecewise_reply_game_has_distinct_extremal_equilibria() {
    // reply a = max(0, 2b − 1/4) capped at 2: fixed points 0, 1/4 and 2
    let game = presets::multi_equilibrium_game();
    let set = AdmissibleSet::fuel(presets::MULTI_EQUILIBRIUM_CAP);
    let opts = TopkisOptions::default();
    let least = topkis::solve_least(&game, &set, &opts).unwrap();
    let greatest = topkis::solve_greatest(&game, &set, &opts).unwrap();
    for i in 0..2 {
        assert_abs_diff_eq!(least.profile[i].get(1, 0), 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(greatest.profile[i].get(1, 0), 2.0, epsilon = 1e-7);
    }
    let middle = vec![AdaptedProcess::constant(&game.tree, &[0.25]); 2];
    let fixed = topkis::solve_from(&game, &set, &opts, middle).unwrap();
    assert_abs_diff_eq!(fixed.profile[0].get(1, 0), 0.25, epsilon = 1e-7);
}

#[test]
fn epsilon_gap_of_the_zero_profile() {
    // J(0) = 1, best reply 1/2 costs 1/4 + 1/2
    let game = presets::scalar_game(0.5);
    let gaps = epsilon_nash_gap(&game, &game.zero_profile(), &SolverOptions::default()).unwrap();
    for g in gaps {
        assert_abs_diff_eq!(g, 0.25, epsilon = 1e-9);
    }
}

#[test]
fn subgradient_matches_finite_differences_of_the_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let game = random_tracking_game(&mut rng, 3);
        let profile: Vec<AdaptedProcess> = (0..2).map(|_| random_control(&game.tree, &mut rng, 0.5)).collect();
        let y = functional::subgradient(&game, 0, &profile).unwrap();
        let dz = profile[0].increments(&game.tree);
        let eps = 1e-6;
        for id in 0..game.tree.len() {
            let bump = |s: f64| {
                let mut inc = dz.clone();
                inc.node_mut(id)[0] += s;
                let own = inc.cumulate(&game.tree);
                functional::cost(&game, 0, &assemble_profile(0, own, &profile[1..])).unwrap()
            };
            let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
            let expect = game.tree.node_prob(id) * y.get(id, 0);
            assert!((fd - expect).abs() <= 1e-6 * expect.abs().max(1.0), "node {id}: {fd} vs {expect}");
        }
    }
}

#[test]
fn conditional_variation_dynamic_program_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for depth in 1..=5 {
        let tree = ScenarioTree::binary(depth, 0.2, rng.gen_range(0.2..0.8)).unwrap();
        for _ in 0..10 {
            let x = AdaptedProcess::from_values(1, (0..tree.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let dp = conditional_variation(&tree, &x).unwrap();
            let brute = conditional_variation_enumerated(&tree, &x).unwrap();
            assert_abs_diff_eq!(dp, brute, epsilon = 1e-12);
        }
    }
}

#[test]
fn conditional_variation_of_simple_processes() {
    // deterministic t on [0, 1]: total drift 1 plus |X_T| = 1
    let chain = ScenarioTree::chain(4, 0.25).unwrap();
    let t = AdaptedProcess::from_fn(&chain, 1, |id, v| v[0] = chain.time_of(id));
    assert_abs_diff_eq!(conditional_variation(&chain, &t).unwrap(), 2.0, epsilon = 1e-12);
    // a martingale only pays E|W_T|
    let tree = ScenarioTree::binary(6, 1.0 / 6.0, 0.5).unwrap();
    let w = tree.brownian(0);
    let leaves: Vec<f64> = tree.leaves().map(|id| w.get(id, 0).abs()).collect();
    let expect = tree.expectation(&leaves).unwrap();
    assert_abs_diff_eq!(conditional_variation(&tree, &w).unwrap(), expect, epsilon = 1e-12);
}

#[test]
fn pseudopath_distance_of_constant_paths() {
    let tree = ScenarioTree::binary(4, 0.25, 0.5).unwrap();
    let x = AdaptedProcess::constant(&tree, &[0.3]);
    let y = AdaptedProcess::constant(&tree, &[0.0]);
    // mass T + 1 = 2 at height 0.3
    assert_abs_diff_eq!(pseudopath_distance(&tree, &x, &y, true).unwrap(), 0.6, epsilon = 1e-12);
    let far = AdaptedProcess::constant(&tree, &[5.0]);
    assert_abs_diff_eq!(pseudopath_distance(&tree, &far, &y, true).unwrap(), 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(pseudopath_distance(&tree, &far, &y, false).unwrap(), 10.0, epsilon = 1e-12);
}

#[test]
fn tree_gbm_mean_has_closed_form() {
    // E exp(σW_T) on ±√dt steps is cosh(σ√dt)^M, within O(dt) of exp(σ²T/2)
    let (mu, sigma) = (0.05, 0.4);
    for depth in [4, 8, 12] {
        let dt = 1.0 / depth as f64;
        let tree = ScenarioTree::binary(depth, dt, 0.5).unwrap();
        let e = sdg_adapters::gbm_exponential(mu, sigma, &tree, 0);
        let leaves: Vec<f64> = tree.leaves().map(|id| e.get(id, 0)).collect();
        let mean = tree.expectation(&leaves).unwrap();
        let exact = ((mu - 0.5 * sigma * sigma) + depth as f64 * (sigma * dt.sqrt()).cosh().ln()).exp();
        assert_abs_diff_eq!(mean, exact, epsilon = 1e-12);
        assert!((mean - mu.exp()).abs() <= sigma.powi(4) * dt);
    }
}

fn two_player_sdg(dynamics: [Dynamics; 2]) -> (ScenarioTree, SdgSpec) {
    let tree = ScenarioTree::product(3, 1.0 / 3.0, 2, 0.5).unwrap();
    let players = dynamics
        .iter()
        .enumerate()
        .map(|(i, d)| SdgPlayer {
            dynamics: *d,
            x0: 0.9 + 0.1 * i as f64,
            running: CostFamily::quadratic(0.5, 0.3, 1.2),
            terminal: CostFamily::quadratic(1.0, 0.3, 1.4),
            noise_factor: i,
        })
        .collect();
    let price = AdaptedProcess::constant(&tree, &[0.2, 0.3]);
    (tree.clone(), SdgSpec { players, price, exogenous: AdaptedProcess::zeros(&tree, 1) })
}

#[test]
fn transformed_states_follow_the_forward_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for dynamics in [
        [Dynamics::Gbm { mu: 0.1, sigma: 0.3 }, Dynamics::Gbm { mu: -0.05, sigma: 0.2 }],
        [Dynamics::Ou { theta: 0.9, mu: 1.0, sigma: 0.4 }, Dynamics::Ou { theta: 0.3, mu: 0.2, sigma: 0.1 }],
    ] {
        let (tree, spec) = two_player_sdg(dynamics);
        let lifted = sdg_adapters::transform_game(&spec, &tree).unwrap();
        for _ in 0..100 {
            let zeta: Vec<AdaptedProcess> = (0..2).map(|_| random_control(&tree, &mut rng, 0.3)).collect();
            let back = sdg_adapters::map_back(&spec, &tree, &lifted.multiplier, &zeta);
            for (j, state) in back.states.iter().enumerate() {
                for id in 0..tree.len() {
                    let affine = lifted.uncontrolled.get(id, j) + lifted.multiplier.get(id, j) * zeta[j].get(id, 0);
                    assert_abs_diff_eq!(state.get(id, 0), affine, epsilon = 1e-12);
                }
            }
        }
    }
}

#[test]
fn transformed_equilibrium_is_an_equilibrium_of_the_original_game() {
    let (tree, spec) = two_player_sdg([Dynamics::Gbm { mu: 0.05, sigma: 0.2 }, Dynamics::Gbm { mu: 0.02, sigma: 0.3 }]);
    let lifted = sdg_adapters::transform_game(&spec, &tree).unwrap();
    let opts = TopkisOptions::default();
    let eq = topkis::solve_least(&lifted.game, &AdmissibleSet::monotone(), &opts).unwrap();
    let back = sdg_adapters::map_back(&spec, &tree, &lifted.multiplier, &eq.profile);
    let raw = sdg_adapters::raw_costs(&spec, &tree, &back.controls).unwrap();
    for (a, b) in raw.iter().zip(&eq.costs) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }
    let cert =
        topkis::certify_equilibrium(&lifted.game, &AdmissibleSet::monotone(), &eq.profile, 1e-6, &opts.inner).unwrap();
    assert!(cert.certified);
}

#[test]
fn scalar_sweep_gaps_follow_the_closed_form() {
    // at level a the best deviation 1/2 + a/2 gains (a − 1)² / 4; rate n caps a at n/10
    let game = presets::scalar_game(0.5);
    let schedule = [1.0, 2.0, 4.0, 8.0, 16.0];
    let rep = mfgame::sweep::run_sweep(&game, &schedule, &Default::default()).unwrap();
    for (k, &n) in schedule.iter().enumerate() {
        let a = (0.1 * n).min(1.0);
        assert_abs_diff_eq!(rep.max_gap_at(k).unwrap(), 0.25 * (a - 1.0) * (a - 1.0), epsilon = 1e-8);
    }
    assert!(rep.max_gap_at(4).unwrap() <= rep.max_gap_at(0).unwrap());
    assert!(rep.max_gap_at(4).unwrap() <= 1e-2);
}
