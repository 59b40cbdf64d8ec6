//! Game model: classes, kernels, rewards, validation and distribution bookkeeping.

use std::fmt;

use nalgebra::DMatrix;

use crate::dist::{Layout, MarginalPolicyDist, StateActionDist, StatePolicyDist};
use crate::error::{Error, Result};
use crate::markov::{self, PolicySet, StationaryDistribution, DEFAULT_POLICY_CAP};
use crate::reward::{Resource, RewardFamily};

/// Kernel column sums must be within this of one.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// One class (subpopulation) of players.
///
/// `kernels[a]` is the column-stochastic matrix `phi(s' | s, a)` with rows indexed by the
/// next state `s'` and columns by the current state `s`. Only columns `s` with `a`
/// admissible in `s` are meaningful.
#[derive(Clone, Debug)]
pub struct ClassSpec {
    pub name: String,
    pub mass: f64,
    pub action_rate: f64,
    pub revision_rate: f64,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    /// `admissible[s]` lists action indices allowed in state `s`, ascending.
    pub admissible: Vec<Vec<usize>>,
    pub kernels: Vec<DMatrix<f64>>,
    pub reward: RewardFamily,
}

impl ClassSpec {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn is_admissible(&self, state: usize, action: usize) -> bool {
        self.admissible
            .get(state)
            .is_some_and(|acts| acts.contains(&action))
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }
}

#[derive(Clone, Debug, Default)]
pub struct GameSpec {
    pub classes: Vec<ClassSpec>,
    /// Resources referenced by congestion rewards.
    pub resources: Vec<Resource>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NoClasses,
    NonPositiveMass { class: usize, mass: f64 },
    MassNotNormalized { total: f64 },
    NonPositiveRate { class: usize, which: &'static str, value: f64 },
    NoStates { class: usize },
    EmptyActionSet { class: usize, state: String },
    UnknownAction { class: usize, state: String, action: usize },
    KernelShape { class: usize, action: String, rows: usize, cols: usize },
    MissingKernel { class: usize, action: String },
    NegativeKernelEntry { class: usize, action: String, row: usize, column: usize, value: f64 },
    NonStochasticColumn { class: usize, action: String, column: usize, sum: f64 },
    RewardShape { class: usize, detail: String },
    UnknownResource { class: usize, action: String, resource: usize },
    CongestionRateMismatch { class: usize, rate: f64, expected: f64 },
    PolicyCapExceeded { class: usize, count: u128, cap: usize },
    Assumption2 { class: usize, policy: usize, recurrent_classes: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NoClasses => write!(f, "game has no classes"),
            NonPositiveMass { class, mass } => write!(f, "class {class}: mass {mass} is not positive"),
            MassNotNormalized { total } => write!(f, "class masses sum to {total}, expected 1"),
            NonPositiveRate { class, which, value } => {
                write!(f, "class {class}: {which} {value} is not positive")
            }
            NoStates { class } => write!(f, "class {class}: no states"),
            EmptyActionSet { class, state } => {
                write!(f, "class {class}: state {state} has an empty admissible action set")
            }
            UnknownAction { class, state, action } => {
                write!(f, "class {class}: state {state} admits unknown action index {action}")
            }
            KernelShape { class, action, rows, cols } => write!(
                f,
                "class {class}: kernel of action {action} has shape {rows}x{cols}, expected square over states"
            ),
            MissingKernel { class, action } => write!(f, "class {class}: no kernel for action {action}"),
            NegativeKernelEntry { class, action, row, column, value } => write!(
                f,
                "class {class}: kernel of action {action} has negative entry {value} at row {row}, column {column}"
            ),
            NonStochasticColumn { class, action, column, sum } => write!(
                f,
                "class {class}: kernel of action {action}, column {column} sums to {sum} (not stochastic)"
            ),
            RewardShape { class, detail } => write!(f, "class {class}: reward: {detail}"),
            UnknownResource { class, action, resource } => write!(
                f,
                "class {class}: action {action} uses undeclared resource index {resource}"
            ),
            CongestionRateMismatch { class, rate, expected } => write!(
                f,
                "class {class}: congestion rewards need a common action rate ({rate} != {expected})"
            ),
            PolicyCapExceeded { class, count, cap } => write!(
                f,
                "class {class}: {count} deterministic policies exceed the enumeration cap {cap}"
            ),
            Assumption2 { class, policy, recurrent_classes } => write!(
                f,
                "class {class}: policy u{} has {recurrent_classes} recurrent communicating classes (Assumption 2 needs exactly one)",
                policy + 1
            ),
        }
    }
}

/// Every violated invariant of a [`GameSpec`]; empty means usable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "ok: no violations");
        }
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// Checks structural constraints, reward shapes and Assumption 2 for every policy.
pub fn validate_game(spec: &GameSpec) -> ValidationReport {
    validate_game_with_cap(spec, DEFAULT_POLICY_CAP)
}

pub fn validate_game_with_cap(spec: &GameSpec, cap: usize) -> ValidationReport {
    let mut out = Vec::new();
    if spec.classes.is_empty() {
        out.push(Violation::NoClasses);
    }
    let total: f64 = spec.classes.iter().map(|c| c.mass).sum();
    if !spec.classes.is_empty() && (total - 1.0).abs() > crate::dist::MASS_TOL {
        out.push(Violation::MassNotNormalized { total });
    }
    let congestion_rate = spec
        .classes
        .iter()
        .find(|c| matches!(c.reward, RewardFamily::Congestion { .. }))
        .map(|c| c.action_rate);

    for (ci, class) in spec.classes.iter().enumerate() {
        let before = out.len();
        if !(class.mass > 0.0) {
            out.push(Violation::NonPositiveMass { class: ci, mass: class.mass });
        }
        for (which, value) in [("action rate", class.action_rate), ("revision rate", class.revision_rate)] {
            if !(value > 0.0 && value.is_finite()) {
                out.push(Violation::NonPositiveRate { class: ci, which, value });
            }
        }
        let n = class.n_states();
        if n == 0 {
            out.push(Violation::NoStates { class: ci });
        }
        if class.admissible.len() != n {
            out.push(Violation::RewardShape {
                class: ci,
                detail: format!("admissible sets cover {} of {n} states", class.admissible.len()),
            });
        }
        for (s, acts) in class.admissible.iter().enumerate() {
            let state = class.states.get(s).cloned().unwrap_or_else(|| s.to_string());
            if acts.is_empty() {
                out.push(Violation::EmptyActionSet { class: ci, state: state.clone() });
            }
            for &a in acts {
                if a >= class.n_actions() {
                    out.push(Violation::UnknownAction { class: ci, state: state.clone(), action: a });
                }
            }
        }
        if class.kernels.len() != class.n_actions() {
            for a in class.kernels.len()..class.n_actions() {
                out.push(Violation::MissingKernel { class: ci, action: class.actions[a].clone() });
            }
        }
        for (a, k) in class.kernels.iter().enumerate() {
            let action = class.actions.get(a).cloned().unwrap_or_else(|| a.to_string());
            if k.is_empty() {
                out.push(Violation::MissingKernel { class: ci, action });
                continue;
            }
            if k.nrows() != n || k.ncols() != n {
                out.push(Violation::KernelShape { class: ci, action, rows: k.nrows(), cols: k.ncols() });
                continue;
            }
            for s in 0..n {
                if !class.is_admissible(s, a) {
                    continue;
                }
                let col = k.column(s);
                for (row, &v) in col.iter().enumerate() {
                    if v < 0.0 || !v.is_finite() {
                        out.push(Violation::NegativeKernelEntry {
                            class: ci,
                            action: action.clone(),
                            row,
                            column: s,
                            value: v,
                        });
                    }
                }
                let sum: f64 = col.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    out.push(Violation::NonStochasticColumn { class: ci, action: action.clone(), column: s, sum });
                }
            }
        }
        check_reward_shape(spec, ci, class, congestion_rate, &mut out);

        // Assumption 2 only makes sense on structurally sound classes.
        if out.len() == before {
            match markov::enumerate_policies(ci, class, cap) {
                Ok(set) => {
                    for u in set.iter() {
                        let k = markov::policy_kernel(class, u);
                        let rec = markov::recurrent_classes(&k);
                        if rec.len() != 1 {
                            out.push(Violation::Assumption2 {
                                class: ci,
                                policy: u.index,
                                recurrent_classes: rec.len(),
                            });
                        }
                    }
                }
                Err(Error::PolicyCapExceeded { count, cap, .. }) => {
                    out.push(Violation::PolicyCapExceeded { class: ci, count, cap });
                }
                Err(e) => out.push(Violation::RewardShape { class: ci, detail: e.to_string() }),
            }
        }
    }
    ValidationReport { violations: out }
}

fn check_reward_shape(
    spec: &GameSpec,
    ci: usize,
    class: &ClassSpec,
    congestion_rate: Option<f64>,
    out: &mut Vec<Violation>,
) {
    let shape = |detail: String| Violation::RewardShape { class: ci, detail };
    match &class.reward {
        RewardFamily::Constant { .. } | RewardFamily::Custom(_) => {}
        RewardFamily::Tabular { values } => {
            if values.len() != class.n_states() || values.iter().any(|row| row.len() != class.n_actions()) {
                out.push(shape(format!(
                    "tabular values must be {}x{} (states x actions)",
                    class.n_states(),
                    class.n_actions()
                )));
            }
        }
        RewardFamily::Congestion { usage } => {
            if usage.len() != class.n_actions() {
                out.push(shape(format!(
                    "congestion usage lists {} actions, class has {}",
                    usage.len(),
                    class.n_actions()
                )));
            }
            for (a, rs) in usage.iter().enumerate() {
                for &r in rs {
                    if r >= spec.resources.len() {
                        out.push(Violation::UnknownResource {
                            class: ci,
                            action: class.actions.get(a).cloned().unwrap_or_default(),
                            resource: r,
                        });
                    }
                }
            }
            if let Some(rate) = congestion_rate {
                if rate != class.action_rate {
                    out.push(Violation::CongestionRateMismatch {
                        class: ci,
                        rate: class.action_rate,
                        expected: rate,
                    });
                }
            }
        }
        RewardFamily::Mac(m) => {
            if m.powers.len() != class.n_actions() {
                out.push(shape(format!(
                    "mac powers list {} actions, class has {}",
                    m.powers.len(),
                    class.n_actions()
                )));
            }
            if m.powers.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                out.push(shape("mac powers must be finite and nonnegative".into()));
            }
            if !(m.noise > 0.0) || !(m.coupling >= 0.0) || !(m.duration > 0.0) || !(m.beta >= 0.0) {
                out.push(shape("mac needs noise > 0, coupling >= 0, duration > 0, beta >= 0".into()));
            }
        }
    }
}

/// Aggregates `mu^c_{SxA}[s, a] = sum_u mu^c[s, u] u(a | s)`.
pub fn aggregate_state_action(game: &Game, mu: &StatePolicyDist) -> Result<StateActionDist> {
    game.check_layout(mu)?;
    Ok(game.aggregate_unchecked(mu.values()))
}

/// `r^c(s, a, mu_SA)`; fails on inadmissible pairs.
pub fn reward_eval(spec: &GameSpec, class: usize, state: usize, action: usize, mu: &StateActionDist) -> Result<f64> {
    let c = spec.classes.get(class).ok_or(Error::DimensionMismatch {
        what: "class index",
        expected: spec.classes.len(),
        found: class,
    })?;
    if !c.is_admissible(state, action) {
        return Err(Error::InadmissibleAction { class, state, action });
    }
    Ok(reward_unchecked(spec, class, state, action, mu))
}

pub(crate) fn reward_unchecked(spec: &GameSpec, class: usize, state: usize, action: usize, mu: &StateActionDist) -> f64 {
    let c = &spec.classes[class];
    match &c.reward {
        RewardFamily::Constant { value } => *value,
        RewardFamily::Tabular { values } => values[state][action],
        RewardFamily::Congestion { usage } => usage[action]
            .iter()
            .map(|&r| spec.resources[r].reward.value(resource_flow(spec, r, c.action_rate, mu)))
            .sum(),
        RewardFamily::Mac(m) => {
            let den = m.interference(class, c.action_rate, mu);
            m.powers[action] * (1.0 / den - m.beta)
        }
        RewardFamily::Custom(f) => f.call(class, state, action, mu),
    }
}

/// `sigma_r = rate * sum over classes/states/actions using r of mu_SA`.
pub fn resource_flow(spec: &GameSpec, resource: usize, rate: f64, mu: &StateActionDist) -> f64 {
    let mut total = 0.0;
    for (ci, class) in spec.classes.iter().enumerate() {
        if let RewardFamily::Congestion { usage } = &class.reward {
            let b = mu.layout().block(ci);
            for (a, rs) in usage.iter().enumerate() {
                if rs.contains(&resource) {
                    total += (0..b.rows).map(|s| mu.values()[b.offset + s * b.cols + a]).sum::<f64>();
                }
            }
        }
    }
    rate * total
}

/// Analytic partials of `r^c(s, a, .)` with respect to every `mu_SA` entry, where the
/// family provides them (`None` for custom rewards).
pub fn reward_gradient(spec: &GameSpec, class: usize, state: usize, action: usize, mu: &StateActionDist) -> Option<Vec<f64>> {
    let _ = state;
    let c = &spec.classes[class];
    let mut grad = vec![0.0; mu.values().len()];
    match &c.reward {
        RewardFamily::Constant { .. } | RewardFamily::Tabular { .. } => {}
        RewardFamily::Congestion { usage } => {
            for &r in &usage[action] {
                let slope = spec.resources[r].reward.derivative(resource_flow(spec, r, c.action_rate, mu));
                for (cj, other) in spec.classes.iter().enumerate() {
                    if let RewardFamily::Congestion { usage: other_usage } = &other.reward {
                        let b = mu.layout().block(cj);
                        for (a2, rs) in other_usage.iter().enumerate() {
                            if rs.contains(&r) {
                                for s2 in 0..b.rows {
                                    grad[b.offset + s2 * b.cols + a2] += slope * c.action_rate;
                                }
                            }
                        }
                    }
                }
            }
        }
        RewardFamily::Mac(m) => {
            let den = m.interference(class, c.action_rate, mu);
            let b = mu.layout().block(class);
            let k = c.action_rate * m.duration * m.coupling;
            for s2 in 0..b.rows {
                for (a2, p2) in m.powers.iter().enumerate() {
                    grad[b.offset + s2 * b.cols + a2] = -m.powers[action] * k * p2 / (den * den);
                }
            }
        }
        RewardFamily::Custom(_) => return None,
    }
    Some(grad)
}

/// A validated game with its policy sets, policy kernels and memoized stationary
/// distributions. Immutable once built.
#[derive(Clone, Debug)]
pub struct Game {
    spec: GameSpec,
    policies: Vec<PolicySet>,
    kernels: Vec<Vec<DMatrix<f64>>>,
    stationary: Vec<Vec<StationaryDistribution>>,
    sp_layout: Layout,
    sa_layout: Layout,
}

impl Game {
    pub fn new(spec: GameSpec) -> Result<Self> {
        Self::with_policy_cap(spec, DEFAULT_POLICY_CAP)
    }

    pub fn with_policy_cap(spec: GameSpec, cap: usize) -> Result<Self> {
        let report = validate_game_with_cap(&spec, cap);
        if !report.is_clean() {
            return Err(Error::InvalidGame(report));
        }
        let mut policies = Vec::with_capacity(spec.classes.len());
        let mut kernels = Vec::with_capacity(spec.classes.len());
        let mut stationary = Vec::with_capacity(spec.classes.len());
        for (ci, class) in spec.classes.iter().enumerate() {
            let set = markov::enumerate_policies(ci, class, cap)?;
            kernels.push(set.iter().map(|u| markov::policy_kernel(class, u)).collect());
            stationary.push(
                set.iter()
                    .map(|u| markov::stationary_distribution(ci, class, u))
                    .collect::<Result<Vec<_>>>()?,
            );
            policies.push(set);
        }
        let sp_layout = Layout::new(spec.classes.iter().zip(&policies).map(|(c, p)| (c.n_states(), p.len())));
        let sa_layout = Layout::new(spec.classes.iter().map(|c| (c.n_states(), c.n_actions())));
        Ok(Game {
            spec,
            policies,
            kernels,
            stationary,
            sp_layout,
            sa_layout,
        })
    }

    pub fn spec(&self) -> &GameSpec {
        &self.spec
    }

    pub fn class(&self, c: usize) -> &ClassSpec {
        &self.spec.classes[c]
    }

    pub fn n_classes(&self) -> usize {
        self.spec.classes.len()
    }

    pub fn policies(&self, c: usize) -> &PolicySet {
        &self.policies[c]
    }

    pub fn n_policies(&self, c: usize) -> usize {
        self.policies[c].len()
    }

    /// Column-stochastic kernel `phi^{c,u}`.
    pub fn policy_kernel(&self, c: usize, u: usize) -> &DMatrix<f64> {
        &self.kernels[c][u]
    }

    pub fn stationary(&self, c: usize, u: usize) -> &StationaryDistribution {
        &self.stationary[c][u]
    }

    pub fn masses(&self) -> Vec<f64> {
        self.spec.classes.iter().map(|c| c.mass).collect()
    }

    pub fn state_policy_layout(&self) -> &Layout {
        &self.sp_layout
    }

    pub fn state_action_layout(&self) -> &Layout {
        &self.sa_layout
    }

    pub fn max_rate(&self) -> f64 {
        self.spec
            .classes
            .iter()
            .map(|c| c.action_rate.max(c.revision_rate))
            .fold(0.0, f64::max)
    }

    /// Builds a state-policy distribution from per-class policy-major blocks.
    pub fn state_policy_dist(&self, per_class: Vec<Vec<f64>>) -> Result<StatePolicyDist> {
        if per_class.len() != self.n_classes() {
            return Err(Error::DimensionMismatch {
                what: "classes",
                expected: self.n_classes(),
                found: per_class.len(),
            });
        }
        StatePolicyDist::new(self.sp_layout.clone(), self.masses(), per_class.concat())
    }

    /// Uniform distribution over all (state, policy) cells of every class.
    pub fn uniform_dist(&self) -> StatePolicyDist {
        let values = self
            .sp_layout
            .blocks()
            .iter()
            .zip(&self.spec.classes)
            .flat_map(|(b, c)| std::iter::repeat(c.mass / b.len() as f64).take(b.len()))
            .collect();
        StatePolicyDist::from_raw(self.sp_layout.clone(), self.masses(), values)
    }

    pub fn marginal(&self, per_class: Vec<Vec<f64>>) -> Result<MarginalPolicyDist> {
        for (c, x) in per_class.iter().enumerate() {
            if x.len() != self.n_policies(c) {
                return Err(Error::DimensionMismatch {
                    what: "marginal length",
                    expected: self.n_policies(c),
                    found: x.len(),
                });
            }
        }
        MarginalPolicyDist::new(self.masses(), per_class)
    }

    pub(crate) fn check_layout(&self, mu: &StatePolicyDist) -> Result<()> {
        if mu.layout() != &self.sp_layout {
            return Err(Error::DimensionMismatch {
                what: "state-policy layout",
                expected: self.sp_layout.len(),
                found: mu.layout().len(),
            });
        }
        Ok(())
    }

    pub(crate) fn aggregate_unchecked(&self, mu: &[f64]) -> StateActionDist {
        let mut out = vec![0.0; self.sa_layout.len()];
        for (c, set) in self.policies.iter().enumerate() {
            let sp = self.sp_layout.block(c);
            let sa = self.sa_layout.block(c);
            for u in set.iter() {
                for (s, &a) in u.assignment.iter().enumerate() {
                    out[sa.offset + s * sa.cols + a] += mu[sp.offset + u.index * sp.rows + s];
                }
            }
        }
        StateActionDist::from_raw(self.sa_layout.clone(), out)
    }

    pub(crate) fn reward(&self, c: usize, s: usize, a: usize, mu: &StateActionDist) -> f64 {
        reward_unchecked(&self.spec, c, s, a, mu)
    }
}
