//! Long-run average payoffs, the payoff map `F`, and the steady-state game.

use crate::dist::{MarginalPolicyDist, StateActionDist, StatePolicyDist};
use crate::error::{Error, Result};
use crate::game::Game;
use crate::markov::RandomizedPolicy;

/// Per-class payoff vectors in canonical policy order.
#[derive(Clone, Debug, PartialEq)]
pub struct PayoffVector {
    pub per_class: Vec<Vec<f64>>,
}

impl PayoffVector {
    pub fn class(&self, c: usize) -> &[f64] {
        &self.per_class[c]
    }

    pub fn is_finite(&self) -> bool {
        self.per_class.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &PayoffVector) -> f64 {
        self.per_class
            .iter()
            .flatten()
            .zip(other.per_class.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `J^c(u, mu_SA) = sum_s eta^{c,u}(s) r^c(s, u(s), mu_SA)`.
pub fn average_payoff(game: &Game, class: usize, policy: usize, mu_sa: &StateActionDist) -> Result<f64> {
    if mu_sa.layout() != game.state_action_layout() {
        return Err(Error::DimensionMismatch {
            what: "state-action layout",
            expected: game.state_action_layout().len(),
            found: mu_sa.layout().len(),
        });
    }
    if policy >= game.n_policies(class) {
        return Err(Error::DimensionMismatch {
            what: "policy index",
            expected: game.n_policies(class),
            found: policy,
        });
    }
    Ok(average_payoff_unchecked(game, class, policy, mu_sa))
}

pub(crate) fn average_payoff_unchecked(game: &Game, class: usize, policy: usize, mu_sa: &StateActionDist) -> f64 {
    let u = game.policies(class).get(policy);
    let eta = &game.stationary(class, policy).eta;
    eta.iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(s, w)| w * game.reward(class, s, u.assignment[s], mu_sa))
        .sum()
}

/// Long-run average payoff of a randomized policy with stationary law `eta`.
pub fn average_payoff_randomized(
    game: &Game,
    class: usize,
    policy: &RandomizedPolicy,
    eta: &[f64],
    mu_sa: &StateActionDist,
) -> Result<f64> {
    policy.validate(game.class(class))?;
    let mut total = 0.0;
    for (s, row) in policy.probs.iter().enumerate() {
        if eta[s] == 0.0 {
            continue;
        }
        for (a, &p) in row.iter().enumerate() {
            if p > 0.0 {
                total += eta[s] * p * game.reward(class, s, a, mu_sa);
            }
        }
    }
    Ok(total)
}

pub(crate) fn payoffs_from_sa(game: &Game, mu_sa: &StateActionDist) -> PayoffVector {
    let per_class = (0..game.n_classes())
        .map(|c| {
            (0..game.n_policies(c))
                .map(|u| average_payoff_unchecked(game, c, u, mu_sa))
                .collect()
        })
        .collect();
    PayoffVector { per_class }
}

/// `F^c(mu) = col(J^c(u, mu_SA), u)`.
pub fn payoff_map(game: &Game, mu: &StatePolicyDist) -> Result<PayoffVector> {
    game.check_layout(mu)?;
    Ok(payoffs_from_sa(game, &game.aggregate_unchecked(mu.values())))
}

/// `mu^c[s, u] = eta^{c,u}(s) x^c[u]`.
pub fn stationary_lift(game: &Game, x: &MarginalPolicyDist) -> Result<StatePolicyDist> {
    check_marginal(game, x)?;
    Ok(StatePolicyDist::from_raw(
        game.state_policy_layout().clone(),
        x.masses().to_vec(),
        lift_values(game, x.classes()),
    ))
}

pub(crate) fn lift_values(game: &Game, x: &[Vec<f64>]) -> Vec<f64> {
    let layout = game.state_policy_layout();
    let mut out = vec![0.0; layout.len()];
    for (c, xc) in x.iter().enumerate() {
        let b = layout.block(c);
        for (u, &xu) in xc.iter().enumerate() {
            let eta = &game.stationary(c, u).eta;
            for (s, e) in eta.iter().enumerate() {
                out[b.offset + u * b.rows + s] = e * xu;
            }
        }
    }
    out
}

/// `F_ss^c(x) = F^c(stationary_lift(x))`.
pub fn steady_state_payoff(game: &Game, x: &MarginalPolicyDist) -> Result<PayoffVector> {
    check_marginal(game, x)?;
    Ok(steady_state_payoff_raw(game, x.classes()))
}

/// Steady-state payoff on the nonnegative orthant (no simplex check); used for
/// derivative checks of the potential.
pub(crate) fn steady_state_payoff_raw(game: &Game, x: &[Vec<f64>]) -> PayoffVector {
    payoffs_from_sa(game, &game.aggregate_unchecked(&lift_values(game, x)))
}

fn check_marginal(game: &Game, x: &MarginalPolicyDist) -> Result<()> {
    if x.n_classes() != game.n_classes() {
        return Err(Error::DimensionMismatch {
            what: "marginal classes",
            expected: game.n_classes(),
            found: x.n_classes(),
        });
    }
    for c in 0..game.n_classes() {
        if x.class(c).len() != game.n_policies(c) {
            return Err(Error::DimensionMismatch {
                what: "marginal length",
                expected: game.n_policies(c),
                found: x.class(c).len(),
            });
        }
    }
    Ok(())
}

/// `F_hat = F - 1 (F . sigma) / m`.
pub fn excess_payoff(payoffs: &[f64], marginal: &[f64], mass: f64) -> Result<Vec<f64>> {
    if payoffs.len() != marginal.len() {
        return Err(Error::DimensionMismatch {
            what: "excess payoff inputs",
            expected: payoffs.len(),
            found: marginal.len(),
        });
    }
    let mean = payoffs.iter().zip(marginal).map(|(f, s)| f * s).sum::<f64>() / mass;
    Ok(payoffs.iter().map(|f| f - mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::aggregate_state_action;
    use crate::reward::RewardFamily;
    use crate::scenarios::example3;

    #[test]
    fn unit_reward_gives_unit_payoffs() {
        let ex = example3::build();
        let f = payoff_map(&ex.game, &ex.mu_fig1).unwrap();
        assert_eq!(f.per_class, vec![vec![1.0, 1.0]]);
        let f = payoff_map(&ex.game, &ex.mu_fig2).unwrap();
        assert_eq!(f.per_class, vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn tabular_reward_weights_stationary_masses() {
        let mut spec = example3::spec();
        spec.classes[0].reward = RewardFamily::Tabular { values: vec![vec![2.0, 2.0], vec![0.0, 0.0]] };
        let game = Game::new(spec).unwrap();
        let mu = game.uniform_dist();
        let sa = aggregate_state_action(&game, &mu).unwrap();
        assert!((average_payoff(&game, 0, 0, &sa).unwrap() - 0.8).abs() < 1e-14);
        assert!((average_payoff(&game, 0, 1, &sa).unwrap() - 1.4).abs() < 1e-14);
    }

    #[test]
    fn lift_reproduces_fig1() {
        let ex = example3::build();
        let x = ex.game.marginal(vec![vec![0.2, 0.8]]).unwrap();
        let mu = stationary_lift(&ex.game, &x).unwrap();
        for (a, b) in mu.values().iter().zip(ex.mu_fig1.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        let f = steady_state_payoff(&ex.game, &x).unwrap();
        assert_eq!(f.per_class, vec![vec![1.0, 1.0]]);

        let x = ex.game.marginal(vec![vec![1.0, 0.0]]).unwrap();
        let mu = stationary_lift(&ex.game, &x).unwrap();
        assert_eq!(mu.values()[2..], [0.0, 0.0]);
        assert!((mu.values()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn excess_payoff_examples() {
        assert_eq!(excess_payoff(&[1.0, 1.0], &[0.2, 0.8], 1.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(excess_payoff(&[2.0, 0.0], &[0.5, 0.5], 1.0).unwrap(), vec![1.0, -1.0]);
        assert_eq!(excess_payoff(&[3.0, 1.0, 2.0], &[1.0, 0.0, 0.0], 1.0).unwrap(), vec![0.0, -2.0, -1.0]);
        assert!(excess_payoff(&[1.0], &[0.5, 0.5], 1.0).is_err());
    }
}
