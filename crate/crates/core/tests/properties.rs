use jam_autodiff::{Graph, Tensor};
use jam_core::assignment::{assignment_value, exhaustive_assignment, optimal_assignment};
use jam_core::data::generate_profiles;
use jam_core::evaluator::{check_deterministic, check_ir};
use jam_core::feasibility::{lottery_decompose, Sampler};
use jam_core::model::{forward, soft_sort_matrix, ArchConfig, InstanceContext, ModelParams, SortMode};
use jam_core::trainer::{best_misreports, build_lagrangian, lagrangian_loss, update_lambda, TrainState};
use jam_core::vcg::vcg_outcome;
use jam_core::{bundle_bids, enumerate_bundles, AuctionConfig, BidProfile, Setting};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny() -> ArchConfig {
    ArchConfig {
        depth: 1,
        width: 8,
        heads: 2,
        ff_width: 8,
        tau: 1.0,
    }
}

/// Gradient of one scalar read off the Lagrangian graph.
fn grad_of(
    params: &ModelParams,
    ctx: &InstanceContext,
    values: &[BidProfile],
    table: &jam_core::trainer::MisreportTable,
    pick: impl Fn(&mut Graph, &jam_core::trainer::LossVars) -> jam_autodiff::Var,
) -> Vec<Tensor> {
    let mut g = Graph::new();
    let vars = params.register(&mut g, true);
    let nb = ctx.config().num_bidders();
    let lv = build_lagrangian(&mut g, &vars, params, ctx, values, table, &vec![0.0; nb], 0.0, 0.5).unwrap();
    let target = pick(&mut g, &lv);
    g.backward(target).unwrap();
    vars.iter().map(|&v| g.grad(v).unwrap()).collect()
}

#[test]
fn lagrangian_gradient_decomposes_by_term() {
    let config = Setting::B.config();
    let params = ModelParams::init(tiny(), 21).unwrap();
    let ctx = InstanceContext::new(&config, 8).unwrap();
    let values = generate_profiles(&config, &Default::default(), 6, 22).unwrap();
    let grid = jam_core::presets::misreport_grid();
    let table = best_misreports(&params, &ctx, &values, &grid, SortMode::Soft { tau: 0.5 }).unwrap();
    let nb = config.num_bidders();
    let lambda: Vec<f64> = (0..nb).map(|x| 0.3 + 0.2 * x as f64).collect();
    let rho = 3.0;

    let full = lagrangian_loss(&params, &ctx, &values, &table, &lambda, rho, 0.5).unwrap();
    let rev_grad = grad_of(&params, &ctx, &values, &table, |_, lv| lv.revenue);
    let mut assembled: Vec<Tensor> = rev_grad
        .iter()
        .map(|t| Tensor::from_fn(t.rows(), t.cols(), |r, c| -t.get(r, c)))
        .collect();
    for x in 0..nb {
        let rgt_grad = grad_of(&params, &ctx, &values, &table, |g, lv| {
            let mut e = Tensor::zeros(1, nb);
            e.set(0, x, 1.0);
            let e = g.constant(e);
            let picked = g.mul(lv.regrets, e).unwrap();
            g.sum_all(picked).unwrap()
        });
        let weight = lambda[x] + rho * full.regrets[x];
        for (a, t) in assembled.iter_mut().zip(&rgt_grad) {
            for (ai, ti) in a.data_mut().iter_mut().zip(t.data()) {
                *ai += weight * ti;
            }
        }
    }
    for (a, b) in assembled.iter().zip(&full.grads) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() / y.abs().max(1.0) <= 1e-6, "{x} vs {y}");
        }
    }
}

#[test]
fn truthful_only_grid_reduces_loss_to_negative_revenue() {
    let config = Setting::A.config();
    let params = ModelParams::init(tiny(), 3).unwrap();
    let ctx = InstanceContext::new(&config, 8).unwrap();
    let values = generate_profiles(&config, &Default::default(), 5, 4).unwrap();
    let table = best_misreports(&params, &ctx, &values, &[1.0], SortMode::Soft { tau: 1.0 }).unwrap();
    let lambda = vec![1.0; config.num_bidders()];
    let eval = lagrangian_loss(&params, &ctx, &values, &table, &lambda, 4.0, 1.0).unwrap();
    assert!(eval.regrets.iter().all(|&r| r == 0.0));
    assert_eq!(eval.loss, -eval.revenue);
}

fn random_instance(seed: u64) -> AuctionConfig {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let m = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=3);
        let relation: Vec<Vec<bool>> = (0..m).map(|_| (0..n).map(|_| rng.gen_bool(0.7)).collect()).collect();
        let c = relation.iter().flatten().filter(|&&r| r).count();
        if c < 2 {
            continue;
        }
        let k = rng.gen_range(1..=(c - 1).min(3));
        let mut ctrs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..0.99)).collect();
        ctrs.sort_by(|a, b| b.total_cmp(a));
        return AuctionConfig::new(m, n, ctrs, relation).unwrap();
    }
}

fn profile_for(config: &AuctionConfig, seed: u64) -> BidProfile {
    generate_profiles(config, &Default::default(), 1, seed)
        .unwrap()
        .remove(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hard_forward_is_deterministic_and_ir(setting in 0usize..4, seed in any::<u64>()) {
        let config = Setting::ALL[setting].config();
        let params = ModelParams::init(tiny(), seed).unwrap();
        let ctx = InstanceContext::new(&config, 8).unwrap();
        let bids = generate_profiles(&config, &Default::default(), 8, seed ^ 1).unwrap();
        let out = forward(&params, &ctx, &bids, SortMode::Hard).unwrap();
        prop_assert!(check_deterministic(&out).pass);
        prop_assert_eq!(check_ir(&out, &bids).unwrap(), 0);
    }

    #[test]
    fn soft_forward_fills_every_slot(setting in 0usize..4, seed in any::<u64>(), tau in 0.05f64..3.0) {
        let config = Setting::ALL[setting].config();
        let params = ModelParams::init(tiny(), seed).unwrap();
        let ctx = InstanceContext::new(&config, 8).unwrap();
        let bids = generate_profiles(&config, &Default::default(), 4, seed ^ 2).unwrap();
        for (o, b) in forward(&params, &ctx, &bids, SortMode::Soft { tau }).unwrap().iter().zip(&bids) {
            let s = &o.alloc_bundle;
            for k in 0..s.num_slots() {
                let col: f64 = (0..s.num_bundles()).map(|c| s.get(c, k)).sum();
                prop_assert!((col - 1.0).abs() <= 1e-9);
            }
            // Payments never exceed the reported value of the allocation.
            for ((p, g), v) in o.payments.iter().zip(&o.expected_ctr).zip(b.flat()) {
                prop_assert!(*p >= 0.0 && *p <= g * v + 1e-15);
            }
        }
    }

    #[test]
    fn soft_sort_rows_are_distributions(q in prop::collection::vec(-5.0f64..5.0, 1..7), tau in 0.01f64..5.0) {
        for row in soft_sort_matrix(&q, tau).unwrap() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn vcg_is_efficient_ir_and_nonnegative(seed in any::<u64>()) {
        let config = random_instance(seed);
        let bids = profile_for(&config, seed ^ 3);
        let out = vcg_outcome(&config, &bids).unwrap();
        let e = bundle_bids(&bids, &enumerate_bundles(&config).unwrap()).unwrap();
        let best = exhaustive_assignment(&e, config.ctrs()).unwrap();
        prop_assert!((out.welfare - assignment_value(&e, config.ctrs(), &best)).abs() <= 1e-12);
        prop_assert_eq!(&out.winners, &optimal_assignment(&e, config.ctrs()).unwrap());
        prop_assert!(out.payments.iter().all(|&p| p >= 0.0));
        let idx = enumerate_bundles(&config).unwrap();
        let full = jam_core::vcg::vcg_auction(&config, &idx, &bids).unwrap();
        prop_assert!(full.utilities.iter().all(|&u| u >= -1e-12));
    }

    #[test]
    fn lambda_never_decreases(start in prop::collection::vec(0.0f64..5.0, 8), regrets in prop::collection::vec(0.0f64..1.0, 8), rho in 0.0f64..64.0) {
        let mut state = TrainState::new(ModelParams::init(tiny(), 0).unwrap(), 8);
        state.lambda = start.clone();
        state.iteration = 100;
        prop_assert!(update_lambda(&mut state, &regrets, rho, 100));
        prop_assert!(state.lambda.iter().zip(&start).all(|(a, b)| a >= b));
    }

    #[test]
    fn deterministic_allocations_are_lotteries(seed in any::<u64>(), c in 2usize..6, k in 1usize..3) {
        prop_assume!(c > k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Sampler::Hard.sample(c, k, &mut rng).unwrap();
        let lottery = lottery_decompose(&s).unwrap();
        prop_assert!(lottery.is_some_and(|l| l.reconstruction_error(&s) <= 1e-9));
    }
}
