#![allow(dead_code)]

use mfg_evo::game::{validate_game, ClassSpec, Game, GameSpec};
use mfg_evo::reward::RewardFamily;
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Column-stochastic `n x n` matrix; each entry is zero with probability `sparsity`, and
/// every column keeps at least one positive entry.
pub fn random_kernel(n: usize, sparsity: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut k = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let keep = rng.gen_range(0..n);
        for i in 0..n {
            if i == keep || rng.gen::<f64>() >= sparsity {
                k[(i, j)] = rng.gen_range(0.05..1.0);
            }
        }
        let s: f64 = k.column(j).sum();
        k.column_mut(j).scale_mut(1.0 / s);
    }
    k
}

/// Game with 1-2 classes, 2-3 states per class, two actions admissible in every state and
/// tabular rewards in `[0, 1)`. Redrawn until validation (including Assumption 2) is clean.
pub fn random_tabular_game(rng: &mut impl Rng) -> Game {
    loop {
        let n_classes = rng.gen_range(1..=2);
        let split = if n_classes == 1 { vec![1.0] } else {
            let a = rng.gen_range(0.2..0.8);
            vec![a, 1.0 - a]
        };
        let classes = split
            .iter()
            .enumerate()
            .map(|(c, &mass)| {
                let n = rng.gen_range(2..=3);
                ClassSpec {
                    name: format!("c{c}"),
                    mass,
                    action_rate: rng.gen_range(0.5..2.0),
                    revision_rate: rng.gen_range(0.5..2.0),
                    states: (0..n).map(|s| format!("s{s}")).collect(),
                    actions: vec!["a0".into(), "a1".into()],
                    admissible: vec![vec![0, 1]; n],
                    kernels: (0..2).map(|_| random_kernel(n, 0.3, rng)).collect(),
                    reward: RewardFamily::Tabular {
                        values: (0..n).map(|_| (0..2).map(|_| rng.gen::<f64>()).collect()).collect(),
                    },
                }
            })
            .collect();
        let spec = GameSpec { classes, resources: Vec::new() };
        if validate_game(&spec).is_clean() {
            return Game::new(spec).expect("validated");
        }
    }
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
