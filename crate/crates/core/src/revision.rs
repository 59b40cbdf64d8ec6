//! Revision protocols: switch-rate maps `rho^c(F^c, sigma)` and their checks.
//!
//! A protocol turns the payoff vector `F` of a class and its policy marginal `sigma`
//! (with class mass `m`) into an `n x n` matrix of nonnegative switch rates. Diagonal
//! entries are always zero; they cancel in every flow.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::StatePolicyDist;
use crate::error::{Error, Result};
use crate::game::Game;
use crate::payoffs::{excess_payoff, payoff_map, stationary_lift};

/// Row-major `n x n` switch-rate matrix, `rate(u, v) = rho_{uv}`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateMatrix {
    n: usize,
    data: Vec<f64>,
}

impl RateMatrix {
    pub fn zeros(n: usize) -> Self {
        RateMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.data[from * self.n..(from + 1) * self.n]
    }

    /// `sum_{v != u} rho_{uv}`.
    pub fn out_rate(&self, from: usize) -> f64 {
        self.row(from)
            .iter()
            .enumerate()
            .filter(|(v, _)| *v != from)
            .map(|(_, r)| r)
            .sum()
    }

    pub fn max_out_rate(&self) -> (usize, f64) {
        (0..self.n)
            .map(|u| (u, self.out_rate(u)))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|r| *r == 0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn set(&mut self, from: usize, to: usize, value: f64) {
        self.data[from * self.n + to] = value;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyTag {
    Imitative,
    ImitativeViaComparison,
    ExcessPayoff,
    SeparableExcessPayoff,
    PairwiseComparison,
    ImpartialPairwiseComparison,
    Null,
    Custom,
}

type RateFn = dyn Fn(&[f64], &[f64], f64) -> Vec<f64> + Send + Sync;

/// Custom rate evaluator `(F, sigma, m) -> row-major n x n rates`.
#[derive(Clone)]
pub struct CustomRates {
    pub tag: FamilyTag,
    eval: Arc<RateFn>,
}

impl CustomRates {
    pub fn new(tag: FamilyTag, eval: impl Fn(&[f64], &[f64], f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        CustomRates { tag, eval: Arc::new(eval) }
    }
}

impl fmt::Debug for CustomRates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomRates({:?})", self.tag)
    }
}

#[derive(Clone, Debug)]
pub enum ProtocolKind {
    /// Imitation driven by dissatisfaction: `rho_uv = (K - F_u) sigma_v / m`.
    Dissatisfaction { k: f64 },
    /// `rho_uv = max(0, F_v - F_u) sigma_v / m`.
    PairwiseProportionalImitation,
    /// Brown-von Neumann-Nash: `rho_uv = max(0, F_hat_v)`.
    Bnn,
    /// `rho_uv = max(0, F_v - F_u)`.
    Smith,
    /// No revisions.
    Null,
    Custom(CustomRates),
}

#[derive(Clone, Debug)]
pub struct RevisionProtocol {
    pub kind: ProtocolKind,
    /// Assumption-3 violations are errors instead of warnings.
    pub strict: bool,
}

pub fn make_dissatisfaction(k: f64) -> RevisionProtocol {
    RevisionProtocol::new(ProtocolKind::Dissatisfaction { k })
}

pub fn make_pairwise_proportional_imitation() -> RevisionProtocol {
    RevisionProtocol::new(ProtocolKind::PairwiseProportionalImitation)
}

pub fn make_bnn() -> RevisionProtocol {
    RevisionProtocol::new(ProtocolKind::Bnn)
}

pub fn make_smith() -> RevisionProtocol {
    RevisionProtocol::new(ProtocolKind::Smith)
}

pub fn make_null() -> RevisionProtocol {
    RevisionProtocol::new(ProtocolKind::Null)
}

impl RevisionProtocol {
    pub fn new(kind: ProtocolKind) -> Self {
        RevisionProtocol { kind, strict: false }
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn family(&self) -> FamilyTag {
        match &self.kind {
            ProtocolKind::Dissatisfaction { .. } => FamilyTag::Imitative,
            ProtocolKind::PairwiseProportionalImitation => FamilyTag::ImitativeViaComparison,
            ProtocolKind::Bnn => FamilyTag::SeparableExcessPayoff,
            ProtocolKind::Smith => FamilyTag::ImpartialPairwiseComparison,
            ProtocolKind::Null => FamilyTag::Null,
            ProtocolKind::Custom(c) => c.tag,
        }
    }

    pub fn name(&self) -> &'static str {
        match &self.kind {
            ProtocolKind::Dissatisfaction { .. } => "dissatisfaction",
            ProtocolKind::PairwiseProportionalImitation => "pairwise-proportional-imitation",
            ProtocolKind::Bnn => "bnn",
            ProtocolKind::Smith => "smith",
            ProtocolKind::Null => "none",
            ProtocolKind::Custom(_) => "custom",
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self.kind, ProtocolKind::Null)
    }

    /// Evaluates `rho(F, sigma)` for a class of mass `mass`.
    pub fn eval_rates(&self, payoffs: &[f64], marginal: &[f64], mass: f64) -> Result<RateMatrix> {
        let n = payoffs.len();
        if marginal.len() != n {
            return Err(Error::DimensionMismatch {
                what: "protocol marginal",
                expected: n,
                found: marginal.len(),
            });
        }
        if payoffs.iter().any(|f| f.is_nan()) {
            return Err(Error::NonFinite { what: "payoff passed to revision protocol".into() });
        }
        let mut rates = RateMatrix::zeros(n);
        match &self.kind {
            ProtocolKind::Null => {}
            ProtocolKind::Dissatisfaction { k } => {
                for u in 0..n {
                    let dissatisfaction = k - payoffs[u];
                    if dissatisfaction < -1e-12 {
                        return Err(Error::ProtocolDomain(format!(
                            "dissatisfaction level K = {k} is below payoff {} of policy u{}",
                            payoffs[u],
                            u + 1
                        )));
                    }
                    let d = dissatisfaction.max(0.0);
                    for v in (0..n).filter(|&v| v != u) {
                        rates.set(u, v, d * marginal[v] / mass);
                    }
                }
            }
            ProtocolKind::PairwiseProportionalImitation => {
                for u in 0..n {
                    for v in (0..n).filter(|&v| v != u) {
                        rates.set(u, v, (payoffs[v] - payoffs[u]).max(0.0) * marginal[v] / mass);
                    }
                }
            }
            ProtocolKind::Bnn => {
                let excess = excess_payoff(payoffs, marginal, mass)?;
                for u in 0..n {
                    for v in (0..n).filter(|&v| v != u) {
                        rates.set(u, v, excess[v].max(0.0));
                    }
                }
            }
            ProtocolKind::Smith => {
                for u in 0..n {
                    for v in (0..n).filter(|&v| v != u) {
                        rates.set(u, v, (payoffs[v] - payoffs[u]).max(0.0));
                    }
                }
            }
            ProtocolKind::Custom(c) => {
                let raw = (c.eval)(payoffs, marginal, mass);
                if raw.len() != n * n {
                    return Err(Error::DimensionMismatch {
                        what: "custom rate matrix",
                        expected: n * n,
                        found: raw.len(),
                    });
                }
                for u in 0..n {
                    for v in (0..n).filter(|&v| v != u) {
                        let r = raw[u * n + v];
                        if !r.is_finite() || r < 0.0 {
                            return Err(Error::ProtocolDomain(format!(
                                "custom protocol produced rate {r} for u{} -> u{}",
                                u + 1,
                                v + 1
                            )));
                        }
                        rates.set(u, v, r);
                    }
                }
            }
        }
        Ok(rates)
    }

    /// Bound on every out-rate given payoffs in `[lo, hi]`, for built-in families.
    pub fn analytic_out_rate_bound(&self, lo: f64, hi: f64, n: usize) -> Option<f64> {
        let spread = (hi - lo).max(0.0);
        let others = n.saturating_sub(1) as f64;
        match &self.kind {
            ProtocolKind::Null => Some(0.0),
            ProtocolKind::Dissatisfaction { k } => Some((k - lo).max(0.0)),
            ProtocolKind::PairwiseProportionalImitation => Some(spread),
            ProtocolKind::Bnn | ProtocolKind::Smith => Some(others * spread),
            ProtocolKind::Custom(_) => None,
        }
    }
}

/// Serializable protocol config: `{family, params {K?}, strict}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub family: String,
    #[serde(default)]
    pub params: ProtocolParams,
    #[serde(default)]
    pub strict: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

impl ProtocolConfig {
    pub fn build(&self) -> Result<RevisionProtocol> {
        let p = match self.family.as_str() {
            "dissatisfaction" => make_dissatisfaction(self.params.k.ok_or_else(|| {
                Error::InvalidParameter("dissatisfaction protocol needs params.K".into())
            })?),
            "pairwise-proportional-imitation" | "ppi" => make_pairwise_proportional_imitation(),
            "bnn" => make_bnn(),
            "smith" => make_smith(),
            "none" | "null" => make_null(),
            other => return Err(Error::InvalidParameter(format!("unknown protocol family {other:?}"))),
        };
        Ok(p.strict(self.strict))
    }
}

/// Outcome of the Assumption-3 check for one class.
#[derive(Clone, Debug)]
pub struct Assumption3Report {
    pub class: usize,
    pub revision_rate: f64,
    /// Payoff range observed over the sampled domain.
    pub payoff_range: (f64, f64),
    /// Analytic out-rate bound over `payoff_range` (built-in families only).
    pub analytic_bound: Option<f64>,
    pub sampled_max: f64,
    pub witness: StatePolicyDist,
    pub witness_policy: usize,
    pub passed: bool,
}

/// Checks `lambda_r >= sup_mu sum_{v != u} rho_uv` for class `class`.
///
/// The payoff range is estimated from stationary lifts of every pure policy profile
/// plus `samples` random points of the state-policy simplex.
pub fn check_assumption3(
    game: &Game,
    class: usize,
    protocol: &RevisionProtocol,
    samples: usize,
    seed: u64,
) -> Result<Assumption3Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(samples + game.n_policies(class));
    for u in 0..game.n_policies(class) {
        let x: Vec<Vec<f64>> = (0..game.n_classes())
            .map(|c| {
                let n = game.n_policies(c);
                let m = game.class(c).mass;
                if c == class {
                    (0..n).map(|v| if v == u { m } else { 0.0 }).collect()
                } else {
                    vec![m / n as f64; n]
                }
            })
            .collect();
        points.push(stationary_lift(game, &game.marginal(x)?)?);
    }
    for _ in 0..samples {
        points.push(random_state_policy(game, &mut rng));
    }

    let n = game.n_policies(class);
    let mass = game.class(class).mass;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for (i, mu) in points.iter().enumerate() {
        let f = payoff_map(game, mu)?;
        let fc = f.class(class);
        for &v in fc {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let sigma = mu.marginal_policy().class(class).to_vec();
        let rates = protocol.eval_rates(fc, &sigma, mass)?;
        let (u, r) = rates.max_out_rate();
        if r > best.0 {
            best = (r, u, i);
        }
    }
    let revision_rate = game.class(class).revision_rate;
    let analytic_bound = protocol.analytic_out_rate_bound(lo, hi, n);
    let passed = match analytic_bound {
        Some(b) => b <= revision_rate + 1e-12,
        None => best.0 <= revision_rate + 1e-12,
    };
    Ok(Assumption3Report {
        class,
        revision_rate,
        payoff_range: (lo, hi),
        analytic_bound,
        sampled_max: best.0,
        witness: points.swap_remove(best.2),
        witness_policy: best.1,
        passed,
    })
}

/// Uniform sample of the product of per-class state-policy simplices.
pub fn random_state_policy(game: &Game, rng: &mut impl Rng) -> StatePolicyDist {
    let layout = game.state_policy_layout().clone();
    let mut values = vec![0.0; layout.len()];
    for (c, b) in layout.blocks().iter().enumerate() {
        let cell = &mut values[b.range()];
        fill_simplex(cell, game.class(c).mass, rng);
    }
    StatePolicyDist::from_raw(layout, game.masses(), values)
}

/// Fills `out` with a uniform point of `{x >= 0, sum x = mass}`.
pub fn fill_simplex(out: &mut [f64], mass: f64, rng: &mut impl Rng) {
    for v in out.iter_mut() {
        *v = -(1.0 - rng.gen::<f64>()).ln();
    }
    let total: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v *= mass / total;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axiom {
    Nonnegative,
    /// `rho_uv = r_uv sigma_v / m` with monotone net conditional imitation rates.
    Imitative,
    /// Imitative with sign-preserving conditional imitation rates.
    ImitativeViaComparison,
    /// Rows depend only on the target (`rho_uv = tau_v(F_hat)`) and `tau` is acute.
    ExcessPayoffAcuteness,
    /// `rho_uv = tau_uv(F)` independent of `sigma` and sign-preserving.
    PairwiseSignPreservation,
}

impl Axiom {
    pub const ALL: [Axiom; 5] = [
        Axiom::Nonnegative,
        Axiom::Imitative,
        Axiom::ImitativeViaComparison,
        Axiom::ExcessPayoffAcuteness,
        Axiom::PairwiseSignPreservation,
    ];
}

#[derive(Clone, Debug)]
pub struct Counterexample {
    pub payoffs: Vec<f64>,
    pub marginal: Vec<f64>,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct AxiomCheck {
    pub axiom: Axiom,
    pub samples: usize,
    /// `None` means "not falsified at `samples` samples".
    pub counterexample: Option<Counterexample>,
}

#[derive(Clone, Debug)]
pub struct AxiomReport {
    pub family: FamilyTag,
    pub checks: Vec<AxiomCheck>,
}

impl AxiomReport {
    pub fn holds(&self, axiom: Axiom) -> bool {
        self.checks
            .iter()
            .find(|c| c.axiom == axiom)
            .is_some_and(|c| c.counterexample.is_none())
    }

    pub fn check(&self, axiom: Axiom) -> &AxiomCheck {
        self.checks.iter().find(|c| c.axiom == axiom).expect("every axiom is checked")
    }

    /// Whether the axioms of the protocol's own family survived sampling.
    pub fn claimed_family_holds(&self) -> bool {
        let needed: &[Axiom] = match self.family {
            FamilyTag::Imitative => &[Axiom::Nonnegative, Axiom::Imitative],
            FamilyTag::ImitativeViaComparison => &[Axiom::Nonnegative, Axiom::Imitative, Axiom::ImitativeViaComparison],
            FamilyTag::ExcessPayoff | FamilyTag::SeparableExcessPayoff => {
                &[Axiom::Nonnegative, Axiom::ExcessPayoffAcuteness]
            }
            FamilyTag::PairwiseComparison | FamilyTag::ImpartialPairwiseComparison => {
                &[Axiom::Nonnegative, Axiom::PairwiseSignPreservation]
            }
            FamilyTag::Null | FamilyTag::Custom => &[Axiom::Nonnegative],
        };
        needed.iter().all(|a| self.holds(*a))
    }
}

const SIGN_TOL: f64 = 1e-12;

fn sign(x: f64) -> i8 {
    if x > SIGN_TOL {
        1
    } else if x < -SIGN_TOL {
        -1
    } else {
        0
    }
}

/// Samples random `(F, sigma)` pairs over `n` policies (class mass one) and tests every
/// family axiom, reporting the first counterexample of each.
pub fn verify_family_axioms(protocol: &RevisionProtocol, n: usize, samples: usize, seed: u64) -> Result<AxiomReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found: Vec<Option<Counterexample>> = vec![None; Axiom::ALL.len()];
    let mass = 1.0;
    for i in 0..samples {
        let mut payoffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // force ties regularly; sign-preservation failures hide on the diagonal F_u = F_v
        if n >= 2 && i % 4 == 0 {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            payoffs[a] = payoffs[b];
        }
        let mut interior = vec![0.0; n];
        fill_simplex(&mut interior, mass, &mut rng);
        let mut sparse = interior.clone();
        if n >= 2 {
            let zero = rng.gen_range(0..n);
            let moved = sparse[zero];
            sparse[zero] = 0.0;
            sparse[(zero + 1) % n] += moved;
        }
        let r_int = protocol.eval_rates(&payoffs, &interior, mass)?;
        let r_sparse = protocol.eval_rates(&payoffs, &sparse, mass)?;
        let witness = |detail: String, marginal: &[f64]| Counterexample {
            payoffs: payoffs.clone(),
            marginal: marginal.to_vec(),
            detail,
        };

        // nonnegativity
        if found[0].is_none() {
            for (rates, m) in [(&r_int, &interior), (&r_sparse, &sparse)] {
                if let Some(pos) = rates.as_slice().iter().position(|r| *r < 0.0) {
                    found[0] = Some(witness(format!("negative rate at {pos}"), m));
                    break;
                }
            }
        }

        // imitative form and monotone net conditional imitation rates
        let cond = |u: usize, v: usize| -> f64 {
            if u == v {
                0.0
            } else {
                r_int.rate(u, v) * mass / interior[v]
            }
        };
        if found[1].is_none() {
            for u in 0..n {
                for v in 0..n {
                    if u != v && sparse[v] == 0.0 && r_sparse.rate(u, v) != 0.0 {
                        found[1] = Some(witness(
                            format!("rate u{} -> u{} is {} with no mass on the target", u + 1, v + 1, r_sparse.rate(u, v)),
                            &sparse,
                        ));
                    }
                }
            }
            'outer: for u in 0..n {
                for v in 0..n {
                    for k in 0..n {
                        let better = payoffs[v] >= payoffs[u];
                        let lhs = cond(k, v) - cond(v, k);
                        let rhs = cond(k, u) - cond(u, k);
                        if better != (lhs >= rhs - SIGN_TOL) {
                            found[1] = Some(witness(
                                format!("net imitation rates not monotone for u{}, u{}, k = u{}", u + 1, v + 1, k + 1),
                                &interior,
                            ));
                            break 'outer;
                        }
                    }
                }
            }
        }

        // via comparison: sign(r_uv) = sign(max(0, F_v - F_u))
        if found[2].is_none() {
            'cmp: for u in 0..n {
                for v in (0..n).filter(|&v| v != u) {
                    if sign(cond(u, v)) != sign((payoffs[v] - payoffs[u]).max(0.0)) {
                        found[2] = Some(witness(
                            format!(
                                "conditional imitation rate u{} -> u{} is {} with F_u = {}, F_v = {}",
                                u + 1,
                                v + 1,
                                cond(u, v),
                                payoffs[u],
                                payoffs[v]
                            ),
                            &interior,
                        ));
                        break 'cmp;
                    }
                }
            }
        }

        // excess payoff: target-only rows and acuteness
        if found[3].is_none() && n >= 2 {
            let excess = excess_payoff(&payoffs, &interior, mass)?;
            let tau: Vec<f64> = (0..n).map(|v| r_int.rate((v + 1) % n, v)).collect();
            let rows_agree = (0..n).all(|u| (0..n).filter(|&v| v != u).all(|v| r_int.rate(u, v) == tau[v]));
            let positive_excess = excess.iter().any(|e| *e > SIGN_TOL);
            let inner: f64 = tau.iter().zip(&excess).map(|(t, e)| t * e).sum();
            if !rows_agree {
                found[3] = Some(witness("switch rates depend on the current policy".into(), &interior));
            } else if positive_excess && !(inner > 0.0) {
                found[3] = Some(witness(format!("tau . F_hat = {inner} with a positive excess payoff"), &interior));
            }
        }

        // pairwise comparison: sigma-independent, sign-preserving
        if found[4].is_none() {
            if r_int != r_sparse {
                found[4] = Some(witness("rates depend on the policy marginal".into(), &interior));
            } else {
                'pc: for u in 0..n {
                    for v in (0..n).filter(|&v| v != u) {
                        if sign(r_int.rate(u, v)) != sign((payoffs[v] - payoffs[u]).max(0.0)) {
                            found[4] = Some(witness(
                                format!("rate u{} -> u{} is {} with F_u = {}, F_v = {}", u + 1, v + 1, r_int.rate(u, v), payoffs[u], payoffs[v]),
                                &interior,
                            ));
                            break 'pc;
                        }
                    }
                }
            }
        }
    }
    let checks = Axiom::ALL
        .iter()
        .zip(found)
        .map(|(&axiom, counterexample)| AxiomCheck { axiom, samples, counterexample })
        .collect();
    Ok(AxiomReport { family: protocol.family(), checks })
}
