//! Two-class, two-resource congestion game.
//!
//! Each class alternates between an `idle` state, where the only action `wait` uses no
//! resource, and an `active` state with two resource-using actions. Actions differ in how
//! quickly they finish, so the stationary time spent active depends on the policy.

use nalgebra::DMatrix;

use crate::equilibria::ResourceModel;
use crate::game::{ClassSpec, Game, GameSpec};
use crate::reward::{Resource, ResourceReward, RewardFamily};

pub struct CongestionDemo {
    pub game: Game,
    pub model: ResourceModel,
}

/// Default rewards `w_1(sigma) = 1 - sigma`, `w_2(sigma) = 1.5 - 2 sigma`.
///
/// With these the commuters split between road and rail at equilibrium.
pub fn default_rewards() -> [ResourceReward; 2] {
    [
        ResourceReward::Affine { intercept: 1.0, slope: -1.0 },
        ResourceReward::Affine { intercept: 1.5, slope: -2.0 },
    ]
}

pub fn build_congestion_demo() -> CongestionDemo {
    build_congestion_demo_with(default_rewards())
}

pub fn congestion_spec(rewards: [ResourceReward; 2]) -> GameSpec {
    // states: idle, active; actions: wait, then two resource-using actions
    let class = |name: &str, mass: f64, actions: [&str; 2], finish: [f64; 2], usage: Vec<Vec<usize>>| {
        let mut wait = DMatrix::<f64>::identity(2, 2);
        wait[(0, 0)] = 0.5;
        wait[(1, 0)] = 0.5;
        let act = |p: f64| {
            let mut k = DMatrix::<f64>::identity(2, 2);
            k[(1, 1)] = 1.0 - p;
            k[(0, 1)] = p;
            k
        };
        ClassSpec {
            name: name.into(),
            mass,
            action_rate: 1.0,
            revision_rate: 10.0,
            states: vec!["idle".into(), "active".into()],
            actions: vec!["wait".into(), actions[0].into(), actions[1].into()],
            admissible: vec![vec![0], vec![1, 2]],
            kernels: vec![wait, act(finish[0]), act(finish[1])],
            reward: RewardFamily::Congestion { usage },
        }
    };
    GameSpec {
        classes: vec![
            class("commuters", 0.6, ["road", "rail"], [0.3, 0.6], vec![vec![], vec![0], vec![1]]),
            class("couriers", 0.4, ["rail", "road"], [0.4, 0.8], vec![vec![], vec![1], vec![0]]),
        ],
        resources: vec![
            Resource { name: "road".into(), reward: rewards[0] },
            Resource { name: "rail".into(), reward: rewards[1] },
        ],
    }
}

pub fn build_congestion_demo_with(rewards: [ResourceReward; 2]) -> CongestionDemo {
    let game = Game::new(congestion_spec(rewards)).expect("demo spec is valid");
    let model = ResourceModel::from_game(&game).expect("demo has congestion rewards");
    CongestionDemo { game, model }
}
