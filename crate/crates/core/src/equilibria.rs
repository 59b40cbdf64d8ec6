//! MSNE verification, dynamics-based MSNE solving, and the potential of congestion games.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dist::{MarginalPolicyDist, StatePolicyDist};
use crate::dynamics::{dynamic_flow, find_rest_point, sup_norm, vector_field, RestPoint, REST_TOL};
use crate::error::{Error, Result};
use crate::game::Game;
use crate::par::Exec;
use crate::payoffs::{payoff_map, stationary_lift, steady_state_payoff_raw, PayoffVector};
use crate::reward::{ResourceReward, RewardFamily};
use crate::revision::{random_state_policy, RevisionProtocol};

/// Default payoff tolerance of the support-optimality test.
pub const MSNE_TOL: f64 = 1e-9;

/// Policies with marginal at or below this are treated as unsupported.
pub const SUPPORT_MASS: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct FieldCheck {
    pub protocols: Vec<String>,
    pub residual: f64,
    pub is_rest_point: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquilibriumCertificate {
    #[serde(serialize_with = "ser_dist")]
    pub mu: StatePolicyDist,
    pub marginals: Vec<Vec<f64>>,
    pub payoffs: Vec<Vec<f64>>,
    /// `max_v F_v - min_{supported u} F_u` per class.
    pub gaps: Vec<f64>,
    /// Largest `|mu[s, u] - x_u eta_u(s)|` over supported policies.
    pub stationarity_residual: f64,
    /// `||f^d(mu)||_inf`.
    pub state_flow_residual: f64,
    pub field_checks: Vec<FieldCheck>,
    pub tol: f64,
    pub is_msne: bool,
}

fn ser_dist<S: serde::Serializer>(mu: &StatePolicyDist, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(mu.values())
}

impl EquilibriumCertificate {
    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(0.0, f64::max)
    }

    /// Adds the field residual of `protocols` at the candidate.
    pub fn check_rest_point(&mut self, game: &Game, protocols: &[RevisionProtocol]) -> Result<bool> {
        let residual = vector_field(game, &self.mu, protocols)?.residual();
        let is_rest_point = residual <= self.tol;
        self.field_checks.push(FieldCheck {
            protocols: protocols.iter().map(|p| p.name().to_string()).collect(),
            residual,
            is_rest_point,
        });
        Ok(is_rest_point)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("certificate is serializable")
    }
}

/// Checks the MSNE conditions at `mu`: every supported policy is payoff-maximal
/// (within `tol`) and `mu[s, u] = x_u eta_u(s)` (within `tol` in mass).
pub fn verify_msne(game: &Game, mu: &StatePolicyDist, tol: f64) -> Result<EquilibriumCertificate> {
    let payoffs = payoff_map(game, mu)?;
    let marginal = mu.marginal_policy();
    let mut gaps = Vec::with_capacity(game.n_classes());
    let mut stationarity: f64 = 0.0;
    for c in 0..game.n_classes() {
        let f = payoffs.class(c);
        let x = marginal.class(c);
        let best = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let worst_supported = f
            .iter()
            .zip(x)
            .filter(|(_, m)| **m > SUPPORT_MASS)
            .map(|(v, _)| *v)
            .fold(f64::INFINITY, f64::min);
        gaps.push(if worst_supported.is_finite() { (best - worst_supported).max(0.0) } else { 0.0 });
        for (u, &xu) in x.iter().enumerate() {
            if xu <= SUPPORT_MASS {
                continue;
            }
            let eta = &game.stationary(c, u).eta;
            for (s, e) in eta.iter().enumerate() {
                stationarity = stationarity.max((mu.get(c, s, u) - xu * e).abs());
            }
        }
    }
    let state_flow_residual = sup_norm(&dynamic_flow(game, mu)?);
    let is_msne = gaps.iter().all(|g| *g <= tol) && stationarity <= tol;
    Ok(EquilibriumCertificate {
        mu: mu.clone(),
        marginals: marginal.classes().to_vec(),
        payoffs: payoffs.per_class,
        gaps,
        stationarity_residual: stationarity,
        state_flow_residual,
        field_checks: Vec::new(),
        tol,
        is_msne,
    })
}

/// NE test of the steady-state game at `x`, via its stationary lift.
pub fn verify_ne_steady_state(game: &Game, x: &MarginalPolicyDist, tol: f64) -> Result<EquilibriumCertificate> {
    verify_msne(game, &stationary_lift(game, x)?, tol)
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub multistart: usize,
    /// Certification tolerance.
    pub tol: f64,
    /// Rest-point tolerance on `||V||_inf`.
    pub rest_tol: f64,
    /// Integration time per round, before polishing.
    pub round_time: f64,
    pub max_rounds: usize,
    /// Policies with less marginal mass than this and a payoff gap above `tol` are dropped
    /// when polishing a candidate. The threshold grows tenfold, up to 0.1, after each round
    /// that neither reaches rest nor drops anything.
    pub drop_mass: f64,
    pub step: Option<f64>,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            multistart: 16,
            tol: MSNE_TOL,
            rest_tol: REST_TOL,
            round_time: 200.0,
            max_rounds: 12,
            drop_mass: 1e-3,
            step: None,
            seed: 0,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StartOutcome {
    pub start: usize,
    pub rest: RestPoint,
    /// Total integration time over all rounds.
    pub time: f64,
    pub certificate: Option<EquilibriumCertificate>,
    /// A converged rest point that failed certification.
    pub defect: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub outcomes: Vec<StartOutcome>,
    /// Distinct certified MSNE, in order of first discovery.
    pub certified: Vec<EquilibriumCertificate>,
}

impl SolveReport {
    pub fn defects(&self) -> impl Iterator<Item = &StartOutcome> {
        self.outcomes.iter().filter(|o| o.defect)
    }

    pub fn non_converged(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.rest.converged).count()
    }
}

/// Integrates the mean dynamic from random interior points and certifies the rest points.
///
/// Each start alternates integration rounds with a polishing step that removes residual
/// mass on clearly suboptimal policies and re-lifts to the stationary distributions; the
/// dynamic then decides whether the polished point is at rest.
pub fn solve_msne_by_dynamics(game: &Game, protocols: &[RevisionProtocol], opts: &SolveOptions) -> Result<SolveReport> {
    if protocols.len() != game.n_classes() {
        return Err(Error::DimensionMismatch {
            what: "protocols (one per class)",
            expected: game.n_classes(),
            found: protocols.len(),
        });
    }
    let outcomes = opts.exec.map(opts.multistart, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(i as u64);
        let mu0 = random_state_policy(game, &mut rng);
        solve_from(game, protocols, mu0, opts, i)
    });
    let mut certified: Vec<EquilibriumCertificate> = Vec::new();
    for o in &outcomes {
        if let Some(cert) = o.certificate.as_ref().filter(|c| c.is_msne) {
            if !certified.iter().any(|c| c.mu.sup_distance(&cert.mu) < 1e-6) {
                certified.push(cert.clone());
            }
        }
    }
    Ok(SolveReport { outcomes, certified })
}

fn solve_from(game: &Game, protocols: &[RevisionProtocol], mu0: StatePolicyDist, opts: &SolveOptions, start: usize) -> StartOutcome {
    let mut mu = mu0;
    let mut time = 0.0;
    let mut last: Option<RestPoint> = None;
    let mut drop_mass = opts.drop_mass;
    for _ in 0..opts.max_rounds {
        let rp = match find_rest_point(game, &mu, protocols, opts.rest_tol, opts.round_time, opts.step) {
            Ok(rp) => rp,
            Err(e) => {
                return StartOutcome {
                    start,
                    rest: last.unwrap_or(RestPoint { mu, residual: f64::NAN, time, converged: false }),
                    time,
                    certificate: None,
                    defect: false,
                    error: Some(e.to_string()),
                }
            }
        };
        time += rp.time;
        match polish(game, &rp.mu, opts.tol, drop_mass) {
            Some(p) => {
                mu = p;
                last = Some(rp);
            }
            None if rp.converged => {
                let cert = verify_msne(game, &rp.mu, opts.tol).and_then(|mut c| {
                    c.check_rest_point(game, protocols)?;
                    Ok(c)
                });
                let (certificate, error) = match cert {
                    Ok(c) => (Some(c), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                let defect = certificate.as_ref().is_some_and(|c| !c.is_msne);
                return StartOutcome { start, rest: rp, time, certificate, defect, error };
            }
            None => {
                // excess-payoff dynamics shed a dominated policy only at rate O(x^2)
                drop_mass = (drop_mass * 10.0).min(MAX_DROP_MASS.max(opts.drop_mass));
                mu = rp.mu.clone();
                last = Some(rp);
            }
        }
    }
    StartOutcome {
        start,
        rest: last.expect("at least one round ran"),
        time,
        certificate: None,
        defect: false,
        error: None,
    }
}

const MAX_DROP_MASS: f64 = 0.1;

/// Drops small suboptimal policy masses and re-lifts; `None` if nothing was dropped.
fn polish(game: &Game, mu: &StatePolicyDist, tol: f64, drop_mass: f64) -> Option<StatePolicyDist> {
    let payoffs = payoff_map(game, mu).ok()?;
    let marginal = mu.marginal_policy();
    let mut dropped = false;
    let mut x = marginal.classes().to_vec();
    for c in 0..game.n_classes() {
        let f = payoffs.class(c);
        let best = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for u in 0..x[c].len() {
            if x[c][u] > 0.0 && x[c][u] < drop_mass && f[u] < best - tol {
                x[c][u] = 0.0;
                dropped = true;
            }
        }
        let total: f64 = x[c].iter().sum();
        if total <= 0.0 {
            return None;
        }
        let m = game.class(c).mass;
        x[c].iter_mut().for_each(|v| *v *= m / total);
    }
    if !dropped {
        return None;
    }
    stationary_lift(game, &MarginalPolicyDist::from_raw(game.masses(), x)).ok()
}

/// Congestion structure of a game: per-resource rewards, per-class action usage and the
/// common action rate.
#[derive(Clone, Debug)]
pub struct ResourceModel {
    pub rewards: Vec<ResourceReward>,
    /// `usage[c][a]` lists the resources used by action `a` of class `c`.
    pub usage: Vec<Vec<Vec<usize>>>,
    pub rate: f64,
}

impl ResourceModel {
    pub fn from_game(game: &Game) -> Result<Self> {
        let mut usage = Vec::with_capacity(game.n_classes());
        let rate = game.class(0).action_rate;
        for c in 0..game.n_classes() {
            let class = game.class(c);
            match &class.reward {
                RewardFamily::Congestion { usage: u } => usage.push(u.clone()),
                other => {
                    return Err(Error::Unsupported(format!(
                        "class {} has a {} reward; the potential needs congestion rewards",
                        class.name,
                        other.name()
                    )))
                }
            }
            if class.action_rate != rate {
                return Err(Error::Unsupported("the potential needs a common action rate across classes".into()));
            }
        }
        Ok(ResourceModel {
            rewards: game.spec().resources.iter().map(|r| r.reward).collect(),
            usage,
            rate,
        })
    }

    /// Steady-state flows `sigma_r(x) = lambda sum_c sum_s sum_u eta^{c,u}(s) x^c[u] [u(s) uses r]`.
    pub fn flows(&self, game: &Game, x: &[Vec<f64>]) -> Vec<f64> {
        let mut flows = vec![0.0; self.rewards.len()];
        for (c, xc) in x.iter().enumerate() {
            for (u, &xu) in xc.iter().enumerate() {
                let policy = game.policies(c).get(u);
                for (s, e) in game.stationary(c, u).eta.iter().enumerate() {
                    for &r in &self.usage[c][policy.assignment[s]] {
                        flows[r] += self.rate * e * xu;
                    }
                }
            }
        }
        flows
    }

    /// `U(x) = (1/lambda) sum_r int_0^{sigma_r(x)} w_r`.
    pub fn potential_raw(&self, game: &Game, x: &[Vec<f64>]) -> f64 {
        self.flows(game, x)
            .iter()
            .zip(&self.rewards)
            .map(|(f, w)| w.integral(*f))
            .sum::<f64>()
            / self.rate
    }
}

pub fn potential_value(game: &Game, model: &ResourceModel, x: &MarginalPolicyDist) -> Result<f64> {
    check_marginal_shape(game, x)?;
    Ok(model.potential_raw(game, x.classes()))
}

fn check_marginal_shape(game: &Game, x: &MarginalPolicyDist) -> Result<()> {
    if x.n_classes() != game.n_classes() || (0..game.n_classes()).any(|c| x.class(c).len() != game.n_policies(c)) {
        return Err(Error::DimensionMismatch {
            what: "marginal shape",
            expected: game.n_classes(),
            found: x.n_classes(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PotentialReport {
    pub points: usize,
    /// Largest `|dU/dx_u - F_u| / max(1, |F_u|)`.
    pub max_rel_error: f64,
    pub worst_point: Vec<Vec<f64>>,
    pub tol: f64,
    pub passed: bool,
}

/// Compares central finite differences of the model's potential with the steady-state
/// payoffs of the game at `samples` random interior points.
pub fn check_full_potential(game: &Game, model: &ResourceModel, samples: usize, seed: u64) -> Result<PotentialReport> {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0, Vec::new());
    for _ in 0..samples {
        let x: Vec<Vec<f64>> = (0..game.n_classes())
            .map(|c| {
                let mut v = vec![0.0; game.n_policies(c)];
                crate::revision::fill_simplex(&mut v, game.class(c).mass, &mut rng);
                v
            })
            .collect();
        let f = steady_state_payoff_raw(game, &x);
        for c in 0..x.len() {
            for u in 0..x[c].len() {
                let mut plus = x.clone();
                let mut minus = x.clone();
                plus[c][u] += H;
                minus[c][u] -= H;
                let fd = (model.potential_raw(game, &plus) - model.potential_raw(game, &minus)) / (2.0 * H);
                let exact = f.class(c)[u];
                let err = (fd - exact).abs() / exact.abs().max(1.0);
                if !(err <= worst.0) {
                    worst = (err, x.clone());
                }
            }
        }
    }
    Ok(PotentialReport {
        points: samples,
        max_rel_error: worst.0,
        worst_point: worst.1,
        tol: TOL,
        passed: worst.0 <= TOL,
    })
}

#[derive(Clone, Debug)]
pub struct CongestionOptions {
    pub multistart: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for CongestionOptions {
    fn default() -> Self {
        CongestionOptions {
            multistart: 10,
            tol: 1e-8,
            max_iter: 100_000,
            seed: 0,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CongestionStart {
    pub x: Vec<Vec<f64>>,
    pub flows: Vec<f64>,
    pub potential: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct CongestionSolution {
    pub certificate: EquilibriumCertificate,
    pub flows: Vec<f64>,
    pub potential: f64,
    pub starts: Vec<CongestionStart>,
    /// Largest sup distance between the flows of two starts.
    pub flow_spread: f64,
}

/// Maximizes the potential over the product of simplices by projected gradient ascent
/// with Armijo backtracking, from `multistart` random points.
pub fn solve_congestion_equilibrium(game: &Game, model: &ResourceModel, opts: &CongestionOptions) -> Result<CongestionSolution> {
    if let Some(w) = model.rewards.iter().find(|w| !w.is_nonincreasing()) {
        return Err(Error::Unsupported(format!("resource reward {w:?} is increasing; the potential need not be concave")));
    }
    let starts = opts.exec.map(opts.multistart.max(1), |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(i as u64);
        let x0: Vec<Vec<f64>> = (0..game.n_classes())
            .map(|c| {
                let mut v = vec![0.0; game.n_policies(c)];
                crate::revision::fill_simplex(&mut v, game.class(c).mass, &mut rng);
                v
            })
            .collect();
        ascend(game, model, x0, opts)
    });
    let best = starts
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if s.potential > starts[b].potential { i } else { b });
    let mut flow_spread: f64 = 0.0;
    for a in &starts {
        for b in &starts {
            flow_spread = flow_spread.max(sup_norm(&a.flows.iter().zip(&b.flows).map(|(p, q)| p - q).collect::<Vec<_>>()));
        }
    }
    let x = MarginalPolicyDist::from_raw(game.masses(), starts[best].x.clone());
    let certificate = verify_ne_steady_state(game, &x, opts.tol)?;
    Ok(CongestionSolution {
        certificate,
        flows: starts[best].flows.clone(),
        potential: starts[best].potential,
        flow_spread,
        starts,
    })
}

fn project_step(x: &[Vec<f64>], grad: &[Vec<f64>], masses: &[f64], step: f64) -> Vec<Vec<f64>> {
    x.iter()
        .zip(grad)
        .zip(masses)
        .map(|((xc, gc), m)| {
            let moved: Vec<f64> = xc.iter().zip(gc).map(|(a, g)| a + step * g).collect();
            project_simplex(&moved, *m)
        })
        .collect()
}

fn ascend(game: &Game, model: &ResourceModel, mut x: Vec<Vec<f64>>, opts: &CongestionOptions) -> CongestionStart {
    let masses = game.masses();
    let mut value = model.potential_raw(game, &x);
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut polishing = false;
    let mut largest_step: f64 = 0.0;
    while iterations < opts.max_iter {
        iterations += 1;
        let grad = steady_state_payoff_raw(game, &x);
        let mut accepted = None;
        let mut trial_step = (step * 2.0).min(1e6);
        for _ in 0..if polishing { 0 } else { 60 } {
            let y = project_step(&x, &grad.per_class, &masses, trial_step);
            let inner: f64 = y
                .iter()
                .flatten()
                .zip(x.iter().flatten())
                .zip(grad.per_class.iter().flatten())
                .map(|((yi, xi), g)| g * (yi - xi))
                .sum();
            let fy = model.potential_raw(game, &y);
            if inner > 0.0 && fy >= value + 1e-4 * inner {
                accepted = Some((y, fy));
                break;
            }
            trial_step *= 0.5;
        }
        // Near the optimum the potential is flat to round-off and Armijo stalls; finish
        // with fixed-step projected gradient, which contracts without comparing values.
        let (y, fy) = match accepted {
            Some(a) => {
                largest_step = largest_step.max(trial_step);
                a
            }
            None => {
                polishing = true;
                trial_step = 0.5 * largest_step.max(step);
                let y = project_step(&x, &grad.per_class, &masses, trial_step);
                let fy = model.potential_raw(game, &y);
                (y, fy)
            }
        };
        let moved = y
            .iter()
            .flatten()
            .zip(x.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        step = trial_step;
        x = y;
        value = fy;
        if (polishing && moved < 1e-15) || kkt_gap(&steady_state_payoff_raw(game, &x), &x) < opts.tol * 1e-6 {
            converged = true;
            break;
        }
    }
    CongestionStart {
        flows: model.flows(game, &x),
        potential: value,
        x,
        iterations,
        converged,
    }
}

fn kkt_gap(f: &PayoffVector, x: &[Vec<f64>]) -> f64 {
    x.iter()
        .zip(&f.per_class)
        .map(|(xc, fc)| {
            let best = fc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            xc.iter()
                .zip(fc)
                .filter(|(m, _)| **m > SUPPORT_MASS)
                .map(|(_, v)| best - v)
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Euclidean projection onto `{x >= 0, sum x = mass}`.
pub fn project_simplex(v: &[f64], mass: f64) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - mass) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}
