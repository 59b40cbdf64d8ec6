mod common;

use common::{random_kernel, random_tabular_game, rng, sup_diff};
use mfg_evo::dist::StatePolicyDist;
use mfg_evo::dynamics::{dynamic_flow, integrate, revision_flow, vector_field, IntegrateOptions};
use mfg_evo::game::{aggregate_state_action, reward_eval, reward_gradient, Game, GameSpec};
use mfg_evo::markov::{enumerate_policies, recurrent_classes, stationary_from_kernel};
use mfg_evo::payoffs::{excess_payoff, payoff_map, stationary_lift, steady_state_payoff};
use mfg_evo::revision::{
    fill_simplex, make_bnn, make_dissatisfaction, make_null, make_pairwise_proportional_imitation, make_smith,
    random_state_policy, RevisionProtocol,
};
use mfg_evo::reward::RewardFamily;
use mfg_evo::scenarios::{congestion, mac};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn all_protocols() -> Vec<RevisionProtocol> {
    vec![
        make_dissatisfaction(2.0),
        make_pairwise_proportional_imitation(),
        make_bnn(),
        make_smith(),
    ]
}

fn game_and_point(seed: u64) -> (Game, StatePolicyDist) {
    let mut r = rng(seed);
    let game = random_tabular_game(&mut r);
    let mu = random_state_policy(&game, &mut r);
    (game, mu)
}

fn class_sums(game: &Game, values: &[f64]) -> Vec<f64> {
    game.state_policy_layout().blocks().iter().map(|b| values[b.range()].iter().sum()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_is_linear_and_admissible(seed in any::<u64>(), w in 0.0f64..1.0) {
        let mut r = rng(seed);
        let game = random_tabular_game(&mut r);
        let a = random_state_policy(&game, &mut r);
        let b = random_state_policy(&game, &mut r);
        let mixed: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| w * x + (1.0 - w) * y).collect();
        let mixed = StatePolicyDist::new(game.state_policy_layout().clone(), game.masses(), mixed).unwrap();
        let (sa, sb, sm) = (
            aggregate_state_action(&game, &a).unwrap(),
            aggregate_state_action(&game, &b).unwrap(),
            aggregate_state_action(&game, &mixed).unwrap(),
        );
        for i in 0..sm.values().len() {
            prop_assert!((sm.values()[i] - (w * sa.values()[i] + (1.0 - w) * sb.values()[i])).abs() <= 1e-14);
        }
        for c in 0..game.n_classes() {
            prop_assert!((sm.class_mass(c) - game.class(c).mass).abs() <= 1e-12);
        }
    }

    #[test]
    fn flows_conserve_mass(seed in any::<u64>()) {
        let (game, mu) = game_and_point(seed);
        let fd = dynamic_flow(&game, &mu).unwrap();
        let layout = game.state_policy_layout();
        for b in layout.blocks() {
            for u in 0..b.cols {
                let s: f64 = (0..b.rows).map(|s| fd[b.offset + u * b.rows + s]).sum();
                prop_assert!(s.abs() <= 1e-14, "state flow of policy {u} sums to {s}");
            }
        }
        for p in all_protocols() {
            let protocols = vec![p; game.n_classes()];
            let fr = revision_flow(&game, &mu, &protocols).unwrap();
            for b in layout.blocks() {
                for s in 0..b.rows {
                    let t: f64 = (0..b.cols).map(|u| fr[b.offset + u * b.rows + s]).sum();
                    prop_assert!(t.abs() <= 1e-14, "revision flow at state {s} sums to {t}");
                }
            }
        }
    }

    #[test]
    fn payoffs_shift_with_rewards(seed in any::<u64>(), c0 in -5.0f64..5.0) {
        let (game, mu) = game_and_point(seed);
        let mut spec: GameSpec = game.spec().clone();
        for class in &mut spec.classes {
            if let RewardFamily::Tabular { values } = &mut class.reward {
                values.iter_mut().flatten().for_each(|v| *v += c0);
            }
        }
        let shifted = Game::new(spec).unwrap();
        let f = payoff_map(&game, &mu).unwrap();
        let g = payoff_map(&shifted, &mu).unwrap();
        for (a, b) in f.per_class.iter().flatten().zip(g.per_class.iter().flatten()) {
            prop_assert!((b - a - c0).abs() <= 1e-12);
        }
    }

    #[test]
    fn lift_consistency_and_excess(seed in any::<u64>()) {
        let (game, mu) = game_and_point(seed);
        let x = mu.marginal_policy();
        let lift = stationary_lift(&game, &x).unwrap();
        let via_lift = payoff_map(&game, &lift).unwrap();
        let direct = steady_state_payoff(&game, &x).unwrap();
        prop_assert!(via_lift.max_abs_diff(&direct) <= 1e-14);
        for c in 0..game.n_classes() {
            let sigma = x.class(c);
            let hat = excess_payoff(direct.class(c), sigma, game.class(c).mass).unwrap();
            let dot: f64 = hat.iter().zip(sigma).map(|(h, s)| h * s).sum();
            prop_assert!(dot.abs() <= 1e-12);
        }
    }

    #[test]
    fn integration_stays_on_simplex(seed in any::<u64>(), which in 0usize..4) {
        let (game, mu) = game_and_point(seed);
        let protocols = vec![all_protocols()[which].clone(); game.n_classes()];
        let rec = integrate(&game, &mu, &protocols, &IntegrateOptions::new(3.0)).unwrap();
        for s in &rec.samples {
            prop_assert!(s.values().iter().all(|v| *v >= 0.0));
            for (m, t) in game.masses().iter().zip(class_sums(&game, s.values())) {
                prop_assert!((m - t).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn policy_count_is_product_of_action_counts() {
    let mut r = rng(5);
    for _ in 0..50 {
        let n = r.gen_range(1..=4);
        let n_actions = r.gen_range(1..=3);
        let admissible: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let mut a: Vec<usize> = (0..n_actions).filter(|_| r.gen_bool(0.6)).collect();
                if a.is_empty() {
                    a.push(0);
                }
                a
            })
            .collect();
        let class = mfg_evo::game::ClassSpec {
            name: "c".into(),
            mass: 1.0,
            action_rate: 1.0,
            revision_rate: 1.0,
            states: (0..n).map(|s| format!("s{s}")).collect(),
            actions: (0..n_actions).map(|a| format!("a{a}")).collect(),
            admissible: admissible.clone(),
            kernels: (0..n_actions).map(|_| DMatrix::identity(n, n)).collect(),
            reward: RewardFamily::Constant { value: 0.0 },
        };
        let set = enumerate_policies(0, &class, 4096).unwrap();
        assert_eq!(set.len(), admissible.iter().map(Vec::len).product::<usize>());
    }
}

#[test]
fn recurrent_classes_are_closed_and_transients_unweighted() {
    let mut r = rng(9);
    let mut single = 0;
    for _ in 0..500 {
        let n = r.gen_range(2..=5);
        let k = random_kernel(n, 0.6, &mut r);
        let classes = recurrent_classes(&k);
        assert!(!classes.is_empty());
        for cls in &classes {
            for &j in cls {
                for i in 0..n {
                    if k[(i, j)] > 0.0 {
                        assert!(cls.contains(&i), "edge {j}->{i} leaves recurrent class {cls:?}");
                    }
                }
            }
        }
        if classes.len() == 1 {
            single += 1;
            let eta = stationary_from_kernel(&k).unwrap();
            for s in 0..n {
                if !classes[0].contains(&s) {
                    assert_eq!(eta[s], 0.0, "transient state {s} has mass");
                }
            }
        } else {
            assert!(stationary_from_kernel(&k).is_err());
        }
    }
    assert!(single > 100);
}

#[test]
fn rates_nonnegative_on_many_samples() {
    let mut r = rng(1);
    for p in all_protocols() {
        for _ in 0..100_000 {
            let n = r.gen_range(2..=5);
            let mass = r.gen_range(0.1..1.0);
            let f: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
            let mut sigma = vec![0.0; n];
            fill_simplex(&mut sigma, mass, &mut r);
            if r.gen_bool(0.2) {
                let k = r.gen_range(0..n);
                let moved = sigma[k];
                sigma[k] = 0.0;
                sigma[(k + 1) % n] += moved;
            }
            let rates = p.eval_rates(&f, &sigma, mass).unwrap();
            assert!(rates.as_slice().iter().all(|v| *v >= 0.0), "{} gave a negative rate", p.name());
        }
    }
}

/// Dyadic payoffs and marginals make shifted arithmetic exact.
fn dyadic_sample(r: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let f = (0..n).map(|_| r.gen_range(0..1024) as f64 / 1024.0).collect();
    let mut cuts: Vec<u32> = (0..n - 1).map(|_| r.gen_range(0..=64)).collect();
    cuts.sort_unstable();
    let mut sigma = Vec::with_capacity(n);
    let mut prev = 0;
    for c in cuts.into_iter().chain([64]) {
        sigma.push((c - prev) as f64 / 64.0);
        prev = c;
    }
    (f, sigma)
}

#[test]
fn smith_and_bnn_ignore_uniform_shifts() {
    let mut r = rng(2);
    for p in [make_smith(), make_bnn()] {
        for _ in 0..2000 {
            let n = r.gen_range(2..=5);
            let (f, sigma) = dyadic_sample(&mut r, n);
            let c0 = r.gen_range(-8..=8) as f64;
            let shifted: Vec<f64> = f.iter().map(|v| v + c0).collect();
            let a = p.eval_rates(&f, &sigma, 1.0).unwrap();
            let b = p.eval_rates(&shifted, &sigma, 1.0).unwrap();
            assert_eq!(a.as_slice(), b.as_slice(), "{}", p.name());
        }
    }
}

#[test]
fn imitative_rates_need_a_target() {
    let mut r = rng(3);
    for p in [make_dissatisfaction(2.0), make_pairwise_proportional_imitation()] {
        for _ in 0..5000 {
            let n = r.gen_range(2..=5);
            let f: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
            let mut sigma = vec![0.0; n];
            fill_simplex(&mut sigma, 1.0, &mut r);
            let v = r.gen_range(0..n);
            let moved = sigma[v];
            sigma[v] = 0.0;
            sigma[(v + 1) % n] += moved;
            let rates = p.eval_rates(&f, &sigma, 1.0).unwrap();
            for u in 0..n {
                assert_eq!(rates.rate(u, v), 0.0, "{}", p.name());
            }
        }
    }
}

#[test]
fn smith_ties_give_no_switching() {
    let mut r = rng(4);
    let p = make_smith();
    for _ in 0..5000 {
        let n = r.gen_range(2..=5);
        let mut f: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let (u, v) = (r.gen_range(0..n), r.gen_range(0..n));
        f[v] = f[u];
        let mut sigma = vec![0.0; n];
        fill_simplex(&mut sigma, 1.0, &mut r);
        let rates = p.eval_rates(&f, &sigma, 1.0).unwrap();
        assert_eq!(rates.rate(u, v), 0.0);
        assert_eq!(rates.rate(v, u), 0.0);
    }
}

#[test]
fn imitative_dynamics_keep_unused_policies_unused() {
    let mut r = rng(6);
    for p in [make_dissatisfaction(2.0), make_pairwise_proportional_imitation()] {
        for _ in 0..10 {
            let game = random_tabular_game(&mut r);
            let mut mu = random_state_policy(&game, &mut r).into_values();
            let layout = game.state_policy_layout().clone();
            // empty policy 0 of every class, moving its mass to policy 1
            for b in layout.blocks() {
                for s in 0..b.rows {
                    mu[b.offset + b.rows + s] += mu[b.offset + s];
                    mu[b.offset + s] = 0.0;
                }
            }
            let mu = StatePolicyDist::new(layout.clone(), game.masses(), mu).unwrap();
            let protocols = vec![p.clone(); game.n_classes()];
            let rec = integrate(&game, &mu, &protocols, &IntegrateOptions::new(5.0)).unwrap();
            for s in &rec.samples {
                for c in 0..game.n_classes() {
                    assert!(s.marginal_policy().class(c)[0] <= 1e-12, "{}", p.name());
                }
            }
        }
    }
}

#[test]
fn trajectories_depend_lipschitz_on_start() {
    let mut r = rng(8);
    for _ in 0..10 {
        let game = random_tabular_game(&mut r);
        let protocols = vec![make_smith(); game.n_classes()];
        // field Lipschitz constant estimated by finite differences
        let mut lip: f64 = 0.0;
        for _ in 0..200 {
            let a = random_state_policy(&game, &mut r);
            let b = random_state_policy(&game, &mut r);
            let t = 1e-3;
            let near: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| (1.0 - t) * x + t * y).collect();
            let near = StatePolicyDist::new(a.layout().clone(), game.masses(), near).unwrap();
            let va = vector_field(&game, &a, &protocols).unwrap().total;
            let vn = vector_field(&game, &near, &protocols).unwrap().total;
            lip = lip.max(sup_diff(&va, &vn) / a.sup_distance(&near));
        }
        let a = random_state_policy(&game, &mut r);
        let b = random_state_policy(&game, &mut r);
        let d0 = a.sup_distance(&b);
        let opts = IntegrateOptions::new(2.0);
        let ra = integrate(&game, &a, &protocols, &opts).unwrap();
        let rb = integrate(&game, &b, &protocols, &opts).unwrap();
        for ((t, x), y) in ra.times.iter().zip(&ra.samples).zip(&rb.samples) {
            assert!(x.sup_distance(y) <= 10.0 * (lip * t).exp() * d0);
        }
    }
}

#[test]
fn null_protocol_field_is_state_flow() {
    let mut r = rng(10);
    for _ in 0..20 {
        let game = random_tabular_game(&mut r);
        let mu = random_state_policy(&game, &mut r);
        let protocols = vec![make_null(); game.n_classes()];
        let v = vector_field(&game, &mu, &protocols).unwrap();
        assert_eq!(v.total, dynamic_flow(&game, &mu).unwrap());
    }
}

/// Central differences of every built-in differentiable family against its gradient.
#[test]
fn reward_gradients_match_finite_differences() {
    let mut r = rng(11);
    let demo = congestion::build_congestion_demo();
    let mac_game = Game::new(mac::build_mac(&mac::MacParams::default()).unwrap()).unwrap();
    for game in [&demo.game, &mac_game] {
        for _ in 0..20 {
            let mu = random_state_policy(game, &mut r);
            let sa = aggregate_state_action(game, &mu).unwrap();
            let spec = game.spec();
            for c in 0..game.n_classes() {
                let class = game.class(c);
                for s in 0..class.n_states() {
                    for &a in &class.admissible[s] {
                        let grad = reward_gradient(spec, c, s, a, &sa).unwrap();
                        for (i, g) in grad.iter().enumerate() {
                            let h = 1e-6;
                            let mut plus = sa.clone();
                            let mut minus = sa.clone();
                            plus.values_mut()[i] += h;
                            minus.values_mut()[i] -= h;
                            let fd = (reward_eval(spec, c, s, a, &plus).unwrap() - reward_eval(spec, c, s, a, &minus).unwrap()) / (2.0 * h);
                            assert!((fd - g).abs() <= 1e-4 * g.abs().max(1.0), "fd {fd} vs analytic {g}");
                        }
                    }
                }
            }
        }
    }
}

/// Difference quotients of `F` stay bounded as perturbations shrink.
#[test]
fn payoff_map_is_lipschitz() {
    let mut r = rng(12);
    let demo = congestion::build_congestion_demo();
    let mac_game = Game::new(mac::build_mac(&mac::MacParams::default()).unwrap()).unwrap();
    for game in [&demo.game, &mac_game] {
        let mut coarse: f64 = 0.0;
        let mut fine: f64 = 0.0;
        for _ in 0..200 {
            let a = random_state_policy(game, &mut r);
            let b = random_state_policy(game, &mut r);
            let fa = payoff_map(game, &a).unwrap();
            for (t, slot) in [(1e-1, &mut coarse), (1e-6, &mut fine)] {
                let v: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| (1.0 - t) * x + t * y).collect();
                let near = StatePolicyDist::new(a.layout().clone(), game.masses(), v).unwrap();
                let ratio = payoff_map(game, &near).unwrap().max_abs_diff(&fa) / a.sup_distance(&near);
                *slot = slot.max(ratio);
            }
        }
        assert!(coarse.is_finite() && fine <= 2.0 * coarse + 1e-6, "coarse {coarse}, fine {fine}");
    }
}
