//! Medium access game with battery states.
//!
//! States `E` (empty), `AE` (almost empty), `F` (full); actions `aN` (no transmission),
//! `aL` (low power), `aH` (high power). An empty battery recharges to full with
//! probability `p_F` per action; transmitting with power `P_a` drops one battery level
//! with probability `d_a = alpha P_a + gamma`. Only `F` offers a choice, so the class has
//! two deterministic policies: `aL` at `F` (index 0, "u1") and `aH` at `F` (index 1, "u0").
//!
//! Default parameters: `P_L = 1`, `P_H = 4`, `p_F = 0.4`, `alpha = 0.15`, `gamma = 0.05`,
//! `sigma^2 = 0.1`, `C = T = 1`, `beta = 0.875`, `lambda_d = 1`, `lambda_r = 15`. They were
//! picked by a grid search so that the mixed equilibrium (`x* ~ 0.4405`) and the
//! behavioral one (`h* ~ 0.6491`) are clearly apart. `lambda_r = 15` keeps the Smith
//! protocol within its revision budget over the whole distribution simplex.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dist::{MarginalPolicyDist, StatePolicyDist};
use crate::error::{Error, Result};
use crate::game::{ClassSpec, Game, GameSpec};
use crate::payoffs::stationary_lift;
use crate::reward::{MacReward, RewardFamily};

pub const E: usize = 0;
pub const AE: usize = 1;
pub const F: usize = 2;

pub const A_N: usize = 0;
pub const A_L: usize = 1;
pub const A_H: usize = 2;

/// Policy index of "low power when full".
pub const U_LOW: usize = 0;
/// Policy index of "high power when full".
pub const U_HIGH: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacParams {
    pub p_low: f64,
    pub p_high: f64,
    pub p_recharge: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub noise: f64,
    /// Interference coupling `C`; zero decouples the players.
    pub coupling: f64,
    pub duration: f64,
    pub beta: f64,
    pub action_rate: f64,
    pub revision_rate: f64,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            p_low: 1.0,
            p_high: 4.0,
            p_recharge: 0.4,
            alpha: 0.15,
            gamma: 0.05,
            noise: 0.1,
            coupling: 1.0,
            duration: 1.0,
            beta: 0.875,
            action_rate: 1.0,
            revision_rate: 15.0,
        }
    }
}

impl MacParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.p_low > 0.0 && self.p_low < self.p_high, "0 < P_L < P_H"),
            (self.p_recharge > 0.0 && self.p_recharge <= 1.0, "p_F in (0, 1]"),
            (self.alpha > 0.0 && self.gamma > 0.0, "alpha > 0 and gamma > 0"),
            (self.alpha * self.p_high + self.gamma <= 1.0, "alpha P_H + gamma <= 1"),
            (self.noise > 0.0, "sigma^2 > 0"),
            (self.coupling >= 0.0, "C >= 0"),
            (self.duration > 0.0, "T > 0"),
            (self.beta >= 0.0, "beta >= 0"),
            (self.action_rate > 0.0 && self.revision_rate > 0.0, "positive rates"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, what)) => Err(Error::InvalidParameter(format!("MAC parameters violate {what}"))),
            None => Ok(()),
        }
    }

    pub fn drop_low(&self) -> f64 {
        self.alpha * self.p_low + self.gamma
    }

    pub fn drop_high(&self) -> f64 {
        self.alpha * self.p_high + self.gamma
    }

    fn load(&self) -> f64 {
        self.action_rate * self.duration * self.coupling
    }
}

pub fn build_mac(params: &MacParams) -> Result<GameSpec> {
    params.validate()?;
    let (pf, dl, dh) = (params.p_recharge, params.drop_low(), params.drop_high());
    let mut kernels = vec![DMatrix::<f64>::identity(3, 3); 3];
    // aN at E: recharge to F
    kernels[A_N][(E, E)] = 1.0 - pf;
    kernels[A_N][(F, E)] = pf;
    // transmissions drop one level: AE -> E, F -> AE
    for (a, d) in [(A_L, dl), (A_H, dh)] {
        kernels[a][(AE, AE)] = 1.0 - d;
        kernels[a][(E, AE)] = d;
        kernels[a][(F, F)] = 1.0 - d;
        kernels[a][(AE, F)] = d;
    }
    Ok(GameSpec {
        classes: vec![ClassSpec {
            name: "transmitters".into(),
            mass: 1.0,
            action_rate: params.action_rate,
            revision_rate: params.revision_rate,
            states: vec!["E".into(), "AE".into(), "F".into()],
            actions: vec!["aN".into(), "aL".into(), "aH".into()],
            admissible: vec![vec![A_N], vec![A_L], vec![A_L, A_H]],
            kernels,
            reward: RewardFamily::Mac(MacReward {
                powers: vec![0.0, params.p_low, params.p_high],
                noise: params.noise,
                coupling: params.coupling,
                duration: params.duration,
                beta: params.beta,
            }),
        }],
        resources: Vec::new(),
    })
}

/// Stationary law of the behavioral policy using `aL` at `F` with probability `q`:
/// `eta_q` proportional to `(1/p_F, 1/d_L, 1/(q d_L + (1-q) d_H))`.
pub fn eta_q(q: f64, params: &MacParams) -> [f64; 3] {
    let d = q * params.drop_low() + (1.0 - q) * params.drop_high();
    let w = [1.0 / params.p_recharge, 1.0 / params.drop_low(), 1.0 / d];
    let total: f64 = w.iter().sum();
    [w[0] / total, w[1] / total, w[2] / total]
}

/// Mean transmit power `A(q)` of a player with behavioral policy `q`.
pub fn mean_power(q: f64, params: &MacParams) -> f64 {
    let eta = eta_q(q, params);
    (eta[AE] + q * eta[F]) * params.p_low + (1.0 - q) * eta[F] * params.p_high
}

/// Long-run payoff of a player using `q` while everyone else uses `h`:
/// `J(q, h) = A(q) (1 / (sigma^2 + lambda T C A(h)) - beta)`.
pub fn mac_deviation_payoff(q: f64, h: f64, params: &MacParams) -> f64 {
    mean_power(q, params) * (1.0 / (params.noise + params.load() * mean_power(h, params)) - params.beta)
}

/// Payoffs `(J(u1, x), J(u0, x))` when a fraction `x` of the population uses low power.
pub fn mac_mixed_payoffs(x: f64, params: &MacParams) -> (f64, f64) {
    let (a1, a0) = (mean_power(1.0, params), mean_power(0.0, params));
    let bar = x * a1 + (1.0 - x) * a0;
    let g = 1.0 / (params.noise + params.load() * bar) - params.beta;
    (a1 * g, a0 * g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// No crossing: the equilibrium sits at the lower end of `[0, 1]`.
    Lower,
    Upper,
}

#[derive(Clone, Debug, Serialize)]
pub struct MacMsne {
    /// Fraction of players using low power.
    pub x: f64,
    /// `J(u1, x) - J(u0, x)`.
    pub payoff_difference: f64,
    pub boundary: Option<Boundary>,
}

/// Bisection on `J(u1, x) - J(u0, x)`; returns a boundary equilibrium if it keeps its sign.
pub fn solve_mac_msne(params: &MacParams, tol: f64) -> Result<MacMsne> {
    params.validate()?;
    let diff = |x: f64| {
        let (j1, j0) = mac_mixed_payoffs(x, params);
        j1 - j0
    };
    let (d0, d1) = (diff(0.0), diff(1.0));
    if d0 <= 0.0 && d1 <= 0.0 {
        return Ok(MacMsne { x: 0.0, payoff_difference: d0, boundary: Some(Boundary::Lower) });
    }
    if d0 >= 0.0 && d1 >= 0.0 {
        return Ok(MacMsne { x: 1.0, payoff_difference: d1, boundary: Some(Boundary::Upper) });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let dm = diff(mid);
        if dm.abs() <= tol * 1e-3 || hi - lo < f64::EPSILON {
            lo = mid;
            hi = mid;
            break;
        }
        if (dm > 0.0) == (d0 > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    Ok(MacMsne { x, payoff_difference: diff(x), boundary: None })
}

#[derive(Clone, Debug, Serialize)]
pub struct MacBsne {
    pub h: f64,
    /// `max_q J(q, h) - J(h, h)`.
    pub deviation_gain: f64,
    pub boundary: Option<Boundary>,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizer of `J(., h)` over `[0, 1]`: golden section plus both endpoints.
pub fn mac_best_response(h: f64, params: &MacParams) -> (f64, f64) {
    let j = |q: f64| mac_deviation_payoff(q, h, params);
    let (mut a, mut b) = (0.0_f64, 1.0_f64);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (j(c), j(d));
    while b - a > 1e-12 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = j(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = j(d);
        }
    }
    let mid = 0.5 * (a + b);
    [(0.0, j(0.0)), (mid, j(mid)), (1.0, j(1.0))]
        .into_iter()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
}

/// Fixed point of the best response: bisection on the sign of `BR(h) - h`.
pub fn solve_mac_bsne(params: &MacParams, tol: f64) -> Result<MacBsne> {
    params.validate()?;
    let gain = |h: f64| mac_best_response(h, params).1 - mac_deviation_payoff(h, h, params);
    let disp = |h: f64| mac_best_response(h, params).0 - h;
    if gain(0.0) <= tol && disp(0.0) <= tol {
        return Ok(MacBsne { h: 0.0, deviation_gain: gain(0.0), boundary: Some(Boundary::Lower) });
    }
    if gain(1.0) <= tol && disp(1.0) >= -tol {
        return Ok(MacBsne { h: 1.0, deviation_gain: gain(1.0), boundary: Some(Boundary::Upper) });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if disp(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if mid == lo && mid == hi {
            break;
        }
    }
    let h = 0.5 * (lo + hi);
    Ok(MacBsne { h, deviation_gain: gain(h), boundary: None })
}

/// Stationary lift of the population with a fraction `x` on low power.
pub fn mac_lift(game: &Game, x: f64) -> Result<StatePolicyDist> {
    let marginal = MarginalPolicyDist::new(vec![1.0], vec![vec![x, 1.0 - x]])?;
    stationary_lift(game, &marginal)
}
