use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfgame::best_reply::{
    assemble_profile, best_reply, best_reply_from, monotone_reply_check, AdmissibleSet, SolverOptions,
};
use mfgame::cost_models::{AffineTarget, CostFamily, QuadraticTracking};
use mfgame::diagnostics::{conditional_variation, conditional_variation_enumerated, foc_report, pseudopath_distance};
use mfgame::functional::{self, GameSpec};
use mfgame::scenario_tree::{AdaptedProcess, ScenarioTree};
use mfgame::sdg_adapters::{self, Dynamics, SdgPlayer, SdgSpec};
use mfgame::topkis::{self, TopkisOptions};

fn control(tree: &ScenarioTree, rng: &mut ChaCha8Rng, max_step: f64) -> AdaptedProcess {
    AdaptedProcess::from_values(1, (0..tree.len()).map(|_| rng.gen_range(0.0..max_step)).collect()).cumulate(tree)
}

fn tracking_game(seed: u64, depth: usize, kappa: f64) -> GameSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = ScenarioTree::binary(depth, 1.0 / depth as f64, rng.gen_range(0.2..0.8)).unwrap();
    let w = tree.brownian(0);
    let vol = rng.gen_range(0.0..1.0);
    let l = AdaptedProcess::from_fn(&tree, 1, |id, v| v[0] = 0.5 + tree.time_of(id) + vol * w.get(id, 0));
    let target = AffineTarget { offset: rng.gen_range(-0.3..0.3), slope: vec![1.0] };
    let h = CostFamily::QuadraticTracking(QuadraticTracking::new(rng.gen_range(0.5..2.0), kappa, target.clone()));
    let g = CostFamily::QuadraticTracking(QuadraticTracking::new(rng.gen_range(0.5..3.0), kappa, target));
    let price = AdaptedProcess::from_fn(&tree, 2, |id, v| {
        v[0] = 0.3 + 0.2 * tree.time_of(id);
        v[1] = 0.3 + 0.2 * tree.time_of(id);
    });
    GameSpec::new(tree, 1, vec![h.clone(), h], vec![g.clone(), g], price, l).unwrap()
}

fn any_set() -> impl Strategy<Value = AdmissibleSet> {
    prop_oneof![
        Just(AdmissibleSet::monotone()),
        (0.5f64..3.0).prop_map(AdmissibleSet::fuel),
        (0.5f64..8.0).prop_map(AdmissibleSet::lipschitz),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn depth_probabilities_sum_to_one(depth in 1usize..7, factors in 1usize..3, up in 0.05f64..0.95) {
        let tree = ScenarioTree::product(depth, 0.1, factors, up).unwrap();
        for m in 0..=depth {
            let s: f64 = tree.nodes_at_depth(m).map(|id| tree.node_prob(id)).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        for id in 1..tree.len() {
            let parent = tree.node(id).parent.unwrap();
            prop_assert!(tree.node(parent).children().contains(&id));
            prop_assert!(tree.time_of(id) > tree.time_of(parent));
        }
    }

    #[test]
    fn increments_and_levels_round_trip(seed in any::<u64>(), depth in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = ScenarioTree::binary(depth, 0.2, 0.5).unwrap();
        let x = AdaptedProcess::from_values(1, (0..tree.len()).map(|_| rng.gen_range(-2.0..2.0)).collect());
        prop_assert!(x.increments(&tree).cumulate(&tree).sup_distance(&x) < 1e-12);
    }

    #[test]
    fn best_replies_are_feasible_and_satisfy_first_order_conditions(
        seed in any::<u64>(),
        depth in 1usize..4,
        kappa in 0.0f64..0.8,
        set in any_set(),
    ) {
        let game = tracking_game(seed, depth, kappa);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let others = [control(&game.tree, &mut rng, 0.5)];
        let r = best_reply(&game, 0, &others, &set, &SolverOptions::default()).unwrap();
        prop_assert!(set.contains(&game.tree, &r.strategy, 1e-9));
        let profile = assemble_profile(0, r.strategy, &others);
        let foc = &foc_report(&game, &profile, &set).unwrap().players[0];
        match set {
            AdmissibleSet::Monotone { cap: None } => {
                prop_assert!(foc.min_subgradient >= -1e-6);
                prop_assert!(foc.slackness.abs() <= 1e-6);
            }
            AdmissibleSet::Lipschitz { .. } => {
                prop_assert!(foc.lipschitz_identity_gap.unwrap() <= 1e-6);
            }
            AdmissibleSet::Monotone { .. } => {}
        }
    }

    #[test]
    fn best_reply_does_not_depend_on_the_starting_point(
        seed in any::<u64>(),
        depth in 1usize..4,
        set in any_set(),
    ) {
        let game = tracking_game(seed, depth, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let other = control(&game.tree, &mut rng, 0.5);
        let opts = SolverOptions::default();
        let from_zero = best_reply(&game, 0, std::slice::from_ref(&other), &set, &opts).unwrap();
        let start = assemble_profile(0, control(&game.tree, &mut rng, 2.0), &[other]);
        let warm = best_reply_from(&game, 0, &start, &set, &opts).unwrap();
        prop_assert!(from_zero.strategy.sup_distance(&warm.strategy) <= 10.0 * opts.grad_tol,
            "distance {}", from_zero.strategy.sup_distance(&warm.strategy));
    }

    #[test]
    fn replies_increase_with_the_opponent(
        seed in any::<u64>(),
        depth in 1usize..4,
        kappa in 0.0f64..0.9,
        set in any_set(),
    ) {
        let game = tracking_game(seed, depth, kappa);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let low = control(&game.tree, &mut rng, 0.4);
        let extra = control(&game.tree, &mut rng, 0.4);
        let high = AdaptedProcess::from_values(1, low.values().iter().zip(extra.values()).map(|(a, b)| a + b).collect());
        let zero = AdaptedProcess::zeros(&game.tree, 1);
        let pairs = vec![(vec![zero.clone(), low], vec![zero, high])];
        let opts = SolverOptions::default();
        let report = monotone_reply_check(&game, 0, &pairs, &set, &opts).unwrap();
        prop_assert!(report.ordered_inputs);
        prop_assert!(report.worst_violation <= 2.0 * opts.grad_tol, "violation {}", report.worst_violation);
    }

    #[test]
    fn symmetric_games_have_symmetric_least_equilibria(
        seed in any::<u64>(),
        depth in 1usize..4,
        kappa in 0.0f64..0.8,
        set in any_set(),
    ) {
        let game = tracking_game(seed, depth, kappa);
        let eq = topkis::solve_least(&game, &set, &TopkisOptions::default()).unwrap();
        prop_assert!(eq.profile[0].sup_distance(&eq.profile[1]) <= 1e-7);
        let again = topkis::best_reply_map(&game, &set, &eq.profile, &SolverOptions::default()).unwrap();
        for (a, b) in again.iter().zip(&eq.profile) {
            prop_assert!(a.sup_distance(b) <= 1e-7);
        }
    }

    #[test]
    fn pseudopath_distance_is_a_bounded_pseudometric(seed in any::<u64>(), depth in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = ScenarioTree::binary(depth, 0.3, 0.5).unwrap();
        let mut draw = || AdaptedProcess::from_values(1, (0..tree.len()).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let (x, y, z) = (draw(), draw(), draw());
        let d = |a: &AdaptedProcess, b: &AdaptedProcess| pseudopath_distance(&tree, a, b, true).unwrap();
        prop_assert_eq!(d(&x, &x), 0.0);
        prop_assert!((d(&x, &y) - d(&y, &x)).abs() < 1e-15);
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12);
        prop_assert!(d(&x, &y) <= tree.horizon() + 1.0 + 1e-12);
    }

    #[test]
    fn conditional_variation_bounds(seed in any::<u64>(), depth in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = ScenarioTree::binary(depth, 0.25, rng.gen_range(0.1..0.9)).unwrap();
        let x = AdaptedProcess::from_values(1, (0..tree.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let cv = conditional_variation(&tree, &x).unwrap();
        let leaves: Vec<f64> = tree.leaves().map(|id| x.get(id, 0).abs()).collect();
        prop_assert!(cv >= tree.expectation(&leaves).unwrap() - 1e-12);
        let brute = conditional_variation_enumerated(&tree, &x).unwrap();
        prop_assert!((cv - brute).abs() < 1e-12);
    }

    #[test]
    fn transformed_costs_equal_original_costs(
        seed in any::<u64>(),
        mu in -0.2f64..0.2,
        sigma in 0.05f64..0.5,
        theta in 0.1f64..2.0,
        kappa in 0.0f64..0.8,
    ) {
        let tree = ScenarioTree::product(3, 0.25, 2, 0.5).unwrap();
        let players = [Dynamics::Gbm { mu, sigma }, Dynamics::Ou { theta, mu: 1.0, sigma }]
            .iter()
            .enumerate()
            .map(|(i, d)| SdgPlayer {
                dynamics: *d,
                x0: 1.0,
                running: CostFamily::quadratic(1.0, kappa, 1.0),
                terminal: CostFamily::quadratic(2.0, kappa, 1.5),
                noise_factor: i,
            })
            .collect();
        let spec = SdgSpec {
            players,
            price: AdaptedProcess::constant(&tree, &[0.4, 0.2]),
            exogenous: AdaptedProcess::zeros(&tree, 1),
        };
        let lifted = sdg_adapters::transform_game(&spec, &tree).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zeta: Vec<AdaptedProcess> = (0..2).map(|_| control(&tree, &mut rng, 0.5)).collect();
        let back = sdg_adapters::map_back(&spec, &tree, &lifted.multiplier, &zeta);
        let raw = sdg_adapters::raw_costs(&spec, &tree, &back.controls).unwrap();
        let transformed = functional::costs(&lifted.game, &zeta).unwrap();
        for (a, b) in raw.iter().zip(&transformed) {
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }
}
