//! Single-stage reward families.
//!
//! A reward is evaluated as `r^c(s, a, mu_SA)` where `mu_SA` is the cross-class
//! state-action distribution. The serializable families cover the cases the
//! engine ships with; [`CustomReward`] wraps an arbitrary closure.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dist::StateActionDist;

type RewardFn = dyn Fn(usize, usize, usize, &StateActionDist) -> f64 + Send + Sync;

/// User-supplied reward `(class, state, action, mu_SA) -> r`.
#[derive(Clone)]
pub struct CustomReward(Arc<RewardFn>);

impl CustomReward {
    pub fn new(f: impl Fn(usize, usize, usize, &StateActionDist) -> f64 + Send + Sync + 'static) -> Self {
        CustomReward(Arc::new(f))
    }

    pub fn call(&self, class: usize, state: usize, action: usize, mu: &StateActionDist) -> f64 {
        (self.0)(class, state, action, mu)
    }
}

impl fmt::Debug for CustomReward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomReward(..)")
    }
}

/// Per-resource reward `w_r(sigma)` of a congestion payoff structure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResourceReward {
    /// `w(sigma) = intercept + slope * sigma`.
    Affine { intercept: f64, slope: f64 },
}

impl ResourceReward {
    pub fn value(&self, flow: f64) -> f64 {
        match *self {
            ResourceReward::Affine { intercept, slope } => intercept + slope * flow,
        }
    }

    pub fn derivative(&self, _flow: f64) -> f64 {
        match *self {
            ResourceReward::Affine { slope, .. } => slope,
        }
    }

    /// `int_0^flow w(z) dz`.
    pub fn integral(&self, flow: f64) -> f64 {
        match *self {
            ResourceReward::Affine { intercept, slope } => intercept * flow + 0.5 * slope * flow * flow,
        }
    }

    pub fn is_nonincreasing(&self) -> bool {
        match *self {
            ResourceReward::Affine { slope, .. } => slope <= 0.0,
        }
    }

    pub fn is_decreasing(&self) -> bool {
        match *self {
            ResourceReward::Affine { slope, .. } => slope < 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    pub name: String,
    pub reward: ResourceReward,
}

/// Expected-SINR reward of the medium access game:
/// `r(s, a) = P_a * (1 / (noise + rate * duration * coupling * sum_a' P_a' mu_SA[S, a']) - beta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacReward {
    /// Transmission power of each class action, in class action order.
    pub powers: Vec<f64>,
    /// Noise power `sigma^2`.
    pub noise: f64,
    pub coupling: f64,
    pub duration: f64,
    pub beta: f64,
}

impl MacReward {
    /// Denominator of the SINR term; `rate` is the class action rate.
    pub fn interference(&self, class: usize, rate: f64, mu: &StateActionDist) -> f64 {
        let power: f64 = self
            .powers
            .iter()
            .enumerate()
            .map(|(a, p)| p * mu.action_mass(class, a))
            .sum();
        self.noise + rate * self.duration * self.coupling * power
    }
}

#[derive(Clone, Debug)]
pub enum RewardFamily {
    Constant { value: f64 },
    /// `values[s][a]` over class states and actions; inadmissible cells ignored.
    Tabular { values: Vec<Vec<f64>> },
    /// `usage[a]` lists resource indices used by class action `a`.
    Congestion { usage: Vec<Vec<usize>> },
    Mac(MacReward),
    Custom(CustomReward),
}

impl RewardFamily {
    pub fn name(&self) -> &'static str {
        match self {
            RewardFamily::Constant { .. } => "constant",
            RewardFamily::Tabular { .. } => "tabular",
            RewardFamily::Congestion { .. } => "congestion",
            RewardFamily::Mac(_) => "mac",
            RewardFamily::Custom(_) => "custom",
        }
    }

    pub fn is_serializable(&self) -> bool {
        !matches!(self, RewardFamily::Custom(_))
    }
}
