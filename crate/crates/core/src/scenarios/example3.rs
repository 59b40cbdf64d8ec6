//! The two-state, two-policy example with unit rewards and imitation driven by
//! dissatisfaction. Its two named distributions separate the MSNE and rest-point
//! notions in both directions.

use nalgebra::DMatrix;

use crate::dist::StatePolicyDist;
use crate::game::{ClassSpec, Game, GameSpec};
use crate::reward::RewardFamily;
use crate::revision::{make_dissatisfaction, RevisionProtocol};

/// Dissatisfaction level of the example's protocol.
pub const K: f64 = 2.0;

pub fn spec() -> GameSpec {
    // rows: next state; columns: current state
    let a1 = DMatrix::from_row_slice(2, 2, &[0.7, 0.2, 0.3, 0.8]);
    let a2 = DMatrix::from_row_slice(2, 2, &[0.5, 0.7, 0.5, 0.3]);
    GameSpec {
        classes: vec![ClassSpec {
            name: "players".into(),
            mass: 1.0,
            action_rate: 1.0,
            revision_rate: 1.0,
            states: vec!["s1".into(), "s2".into()],
            actions: vec!["a1".into(), "a2".into()],
            admissible: vec![vec![0], vec![0, 1]],
            kernels: vec![a1, a2],
            reward: RewardFamily::Constant { value: 1.0 },
        }],
        resources: Vec::new(),
    }
}

pub struct Example3 {
    pub game: Game,
    /// Stationary lift of the marginal (0.2, 0.8): an MSNE that is not a rest point.
    pub mu_fig1: StatePolicyDist,
    /// A rest point of the dissatisfaction dynamic that is not an MSNE.
    pub mu_fig2: StatePolicyDist,
    pub protocol: RevisionProtocol,
}

pub fn build() -> Example3 {
    let game = Game::new(spec()).expect("example spec is valid");
    let mu_fig1 = game
        .state_policy_dist(vec![vec![0.08, 0.12, 0.56, 0.24]])
        .expect("valid distribution");
    let mu_fig2 = game
        .state_policy_dist(vec![vec![0.30, 0.30, 0.25, 0.15]])
        .expect("valid distribution");
    Example3 {
        game,
        mu_fig1,
        mu_fig2,
        protocol: make_dissatisfaction(K),
    }
}
