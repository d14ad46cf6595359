use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unbiased_softmax::data::{ClassWeights, Dataset};
use unbiased_softmax::implicit::{implicit_update_1x1, implicit_update_1xm, ImplicitContext, NewtonOptions};
use unbiased_softmax::objective::{stoch_grad, Formulation, ModelState, SampledTerm};
use unbiased_softmax::oracle::{brute_force_prox_1x1, fixed_point_residual, prox_objective, reduced_prox_objective};
use unbiased_softmax::sparse::inner_product_count;
use unbiased_softmax::synth::{random_state, random_tiny};

struct Instance {
    ds: Dataset,
    state: ModelState,
    mu: f64,
    eta: f64,
    i: usize,
    k: usize,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k, d) = (rng.gen_range(3..30), rng.gen_range(2..12), rng.gen_range(1..8));
    let ds = random_tiny(&mut rng, n, k, d);
    let scale = rng.gen_range(0.1..4.0);
    let state = random_state(&mut rng, &ds, scale, (0.0, 5.0), Formulation::Ours);
    let mu = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..2.0) };
    let eta = 10f64.powf(rng.gen_range(-4.0..1.0)) / ds.n() as f64;
    let i = rng.gen_range(0..ds.n());
    let r = rng.gen_range(0..ds.k() - 1);
    let k = if r >= ds.y(i) { r + 1 } else { r };
    Instance { ds, state, mu, eta, i, k }
}

fn theta_norm(s: &ModelState) -> f64 {
    s.w.iter().chain(&s.u).map(|v| v * v).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn single_class_update_is_a_proximal_fixed_point(seed in any::<u64>()) {
        let t = instance(seed);
        let weights = ClassWeights::single(&t.ds).unwrap();
        let upd = implicit_update_1x1(&t.ds, &weights, &t.state, t.mu, t.eta, t.i, t.k).unwrap();
        let mut after = t.state.clone();
        upd.apply(&t.ds, &mut after);
        let term = SampledTerm::pair(t.i, t.k);
        let res = fixed_point_residual(&t.ds, &weights, t.mu, t.eta, &t.state, &after, &term);
        prop_assert!(res <= 1e-8 * (1.0 + theta_norm(&t.state)), "residual {:e}", res);
        let at_start = prox_objective(&t.ds, &weights, t.mu, t.eta, &t.state, &t.state, &term);
        let at_update = prox_objective(&t.ds, &weights, t.mu, t.eta, &t.state, &after, &term);
        prop_assert!(at_update <= at_start + 1e-12 * at_start.abs());
    }

    #[test]
    fn multi_class_update_decreases_the_proximal_objective(seed in any::<u64>(), m in 1usize..5) {
        let t = instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let m = m.min(t.ds.k() - 1);
        let others: Vec<usize> = (0..t.ds.k()).filter(|&c| c != t.ds.y(t.i)).collect();
        let classes: Vec<usize> = rand::seq::index::sample(&mut rng, others.len(), m).into_iter().map(|j| others[j]).collect();
        let weights = ClassWeights::for_subset_size(&t.ds, m).unwrap();
        let upd = implicit_update_1xm(&t.ds, &weights, &t.state, t.mu, t.eta, t.i, &classes, NewtonOptions::default()).unwrap();
        let mut after = t.state.clone();
        upd.apply(&t.ds, &mut after);
        let term = SampledTerm::without_replacement(t.i, classes);
        let res = fixed_point_residual(&t.ds, &weights, t.mu, t.eta, &t.state, &after, &term);
        prop_assert!(res <= 1e-8 * (1.0 + theta_norm(&t.state)), "residual {:e}", res);
        let at_start = prox_objective(&t.ds, &weights, t.mu, t.eta, &t.state, &t.state, &term);
        let at_update = prox_objective(&t.ds, &weights, t.mu, t.eta, &t.state, &after, &term);
        prop_assert!(at_update <= at_start + 1e-12 * at_start.abs());
    }

    #[test]
    fn single_class_update_takes_two_inner_products(seed in any::<u64>()) {
        let t = instance(seed);
        let weights = ClassWeights::single(&t.ds).unwrap();
        let before = inner_product_count();
        implicit_update_1x1(&t.ds, &weights, &t.state, t.mu, t.eta, t.i, t.k).unwrap();
        prop_assert_eq!(inner_product_count() - before, 2);
    }
}

#[test]
fn agrees_with_the_golden_section_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let t = instance(rng.gen());
        let weights = ClassWeights::single(&t.ds).unwrap();
        let upd = implicit_update_1x1(&t.ds, &weights, &t.state, t.mu, t.eta, t.i, t.k).unwrap();
        let ctx = ImplicitContext::new(&t.ds, &weights, &t.state, t.mu, t.eta, t.i, t.k);
        let oracle = brute_force_prox_1x1(&ctx);
        let mut after = t.state.clone();
        upd.apply(&t.ds, &mut after);
        let x = t.ds.x(t.i);
        let gap = x.dot(after.row(t.k)) - x.dot(after.row(t.ds.y(t.i)));
        let ours = reduced_prox_objective(&ctx, upd.u_new, gap);
        assert!(
            (ours - oracle.value).abs() <= 1e-6 * oracle.value.abs().max(1.0),
            "solver {ours} vs oracle {}",
            oracle.value
        );
    }
}

#[test]
fn step_dominance_with_ridge() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let mut t = instance(rng.gen());
        t.mu = rng.gen_range(0.01..2.0);
        let weights = ClassWeights::single(&t.ds).unwrap();
        let upd = implicit_update_1x1(&t.ds, &weights, &t.state, t.mu, t.eta, t.i, t.k).unwrap();
        let mut after = t.state.clone();
        upd.apply(&t.ds, &mut after);
        let g_new = stoch_grad(&t.ds, &weights, &after, t.mu, t.i, t.k).unwrap().norm(&t.ds, &after);
        let g_old = stoch_grad(&t.ds, &weights, &t.state, t.mu, t.i, t.k).unwrap().norm(&t.ds, &t.state);
        assert!(g_new <= g_old * (1.0 + 1e-12), "{g_new} > {g_old}");
    }
}
