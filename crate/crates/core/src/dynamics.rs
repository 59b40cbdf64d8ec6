//! The mean dynamic: state flows `f^d`, revision flows `f^r`, fixed-step integration
//! and rest-point search.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dist::{StatePolicyDist, INTEGRATED_MASS_TOL};
use crate::error::{Error, Result};
use crate::game::Game;
use crate::payoffs::{payoffs_from_sa, PayoffVector};
use crate::revision::RevisionProtocol;

/// Default rest-point tolerance in the sup norm.
pub const REST_TOL: f64 = 1e-10;

/// Entries below `-NEGATIVE_TOL` after a step abort the integration.
pub const NEGATIVE_TOL: f64 = 1e-9;

/// Flows over the state-policy layout of a game.
#[derive(Clone, Debug)]
pub struct FlowField {
    pub state: Vec<f64>,
    pub revision: Vec<f64>,
    pub total: Vec<f64>,
}

impl FlowField {
    pub fn residual(&self) -> f64 {
        sup_norm(&self.total)
    }

    pub fn state_residual(&self) -> f64 {
        sup_norm(&self.state)
    }
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn check_protocols(game: &Game, protocols: &[RevisionProtocol]) -> Result<()> {
    if protocols.len() != game.n_classes() {
        return Err(Error::DimensionMismatch {
            what: "protocols (one per class)",
            expected: game.n_classes(),
            found: protocols.len(),
        });
    }
    Ok(())
}

/// `f^{c,d}_{s,u} = lambda_d (sum_{s'} phi^{c,u}(s|s') mu[s',u] - mu[s,u])`.
pub fn dynamic_flow(game: &Game, mu: &StatePolicyDist) -> Result<Vec<f64>> {
    game.check_layout(mu)?;
    let mut out = vec![0.0; mu.values().len()];
    state_flow_raw(game, mu.values(), &mut out);
    Ok(out)
}

pub(crate) fn state_flow_raw(game: &Game, x: &[f64], out: &mut [f64]) {
    for c in 0..game.n_classes() {
        let b = game.state_policy_layout().block(c);
        let rate = game.class(c).action_rate;
        for u in 0..b.cols {
            let k = game.policy_kernel(c, u);
            let start = b.offset + u * b.rows;
            let col = &x[start..start + b.rows];
            for s in 0..b.rows {
                let inflow: f64 = (0..b.rows).map(|sp| k[(s, sp)] * col[sp]).sum();
                out[start + s] = rate * (inflow - col[s]);
            }
        }
    }
}

/// `f^{c,r}_{s,u} = sum_{u'} mu[s,u'] rho_{u'u} - mu[s,u] sum_{u'} rho_{uu'}`.
pub fn revision_flow(game: &Game, mu: &StatePolicyDist, protocols: &[RevisionProtocol]) -> Result<Vec<f64>> {
    game.check_layout(mu)?;
    check_protocols(game, protocols)?;
    let mut out = vec![0.0; mu.values().len()];
    revision_flow_raw(game, protocols, mu.values(), &mut out)?;
    Ok(out)
}

pub(crate) fn revision_flow_raw(game: &Game, protocols: &[RevisionProtocol], x: &[f64], out: &mut [f64]) -> Result<()> {
    out.iter_mut().for_each(|v| *v = 0.0);
    if protocols.iter().all(|p| p.is_null()) {
        return Ok(());
    }
    let payoffs = payoffs_from_sa(game, &game.aggregate_unchecked(x));
    for (c, protocol) in protocols.iter().enumerate() {
        if protocol.is_null() {
            continue;
        }
        let b = game.state_policy_layout().block(c);
        let class = game.class(c);
        let block = &x[b.range()];
        let sigma: Vec<f64> = (0..b.cols).map(|u| block[u * b.rows..(u + 1) * b.rows].iter().sum()).collect();
        let rates = protocol.eval_rates(payoffs.class(c), &sigma, class.mass)?;
        if protocol.strict {
            let (u, row_sum) = rates.max_out_rate();
            if row_sum > class.revision_rate + 1e-12 {
                return Err(Error::Assumption3 {
                    class: c,
                    policy: u,
                    row_sum,
                    revision_rate: class.revision_rate,
                });
            }
        }
        let out_rates: Vec<f64> = (0..b.cols).map(|u| rates.out_rate(u)).collect();
        for u in 0..b.cols {
            for s in 0..b.rows {
                let inflow: f64 = (0..b.cols)
                    .filter(|&up| up != u)
                    .map(|up| block[up * b.rows + s] * rates.rate(up, u))
                    .sum();
                out[b.offset + u * b.rows + s] = inflow - block[u * b.rows + s] * out_rates[u];
            }
        }
    }
    Ok(())
}

pub fn vector_field(game: &Game, mu: &StatePolicyDist, protocols: &[RevisionProtocol]) -> Result<FlowField> {
    let state = dynamic_flow(game, mu)?;
    let revision = revision_flow(game, mu, protocols)?;
    let total = state.iter().zip(&revision).map(|(d, r)| d + r).collect();
    Ok(FlowField { state, revision, total })
}

/// Evaluates `V = f^d + f^r` into `out`.
pub(crate) fn field_raw(game: &Game, protocols: &[RevisionProtocol], x: &[f64], out: &mut [f64], scratch: &mut [f64]) -> Result<()> {
    state_flow_raw(game, x, out);
    revision_flow_raw(game, protocols, x, scratch)?;
    for (o, r) in out.iter_mut().zip(scratch.iter()) {
        *o += r;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Rk4,
    Euler,
}

#[derive(Clone, Debug)]
pub struct IntegrateOptions {
    pub horizon: f64,
    /// Defaults to `0.01 / max(lambda_d, lambda_r)`.
    pub step: Option<f64>,
    pub method: Method,
    /// Record every k-th grid point; the endpoint is always recorded.
    pub record_every: usize,
}

impl IntegrateOptions {
    pub fn new(horizon: f64) -> Self {
        IntegrateOptions {
            horizon,
            step: None,
            method: Method::Rk4,
            record_every: 1,
        }
    }

    pub fn step(mut self, step: f64) -> Self {
        self.step = Some(step);
        self
    }

    pub fn method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k.max(1);
        self
    }
}

pub fn default_step(game: &Game) -> f64 {
    let rate = game.max_rate();
    if rate > 0.0 {
        0.01 / rate
    } else {
        0.01
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub samples: Vec<StatePolicyDist>,
    /// `||V(mu(t_k))||_inf`.
    pub residuals: Vec<f64>,
    pub payoffs: Vec<PayoffVector>,
    pub step: f64,
    pub method: Method,
}

impl TrajectoryRecord {
    pub fn endpoint(&self) -> &StatePolicyDist {
        self.samples.last().expect("a trajectory has at least one sample")
    }

    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().expect("a trajectory has at least one sample")
    }

    /// `(t, class, state, policy, mass)` rows with names from `game`.
    pub fn write_csv(&self, game: &Game, out: impl Write) -> Result<()> {
        write_trajectory_csv(game, &self.times, &self.samples, out)
    }

    /// `(t, residual, F_<class>_<policy>...)` rows.
    pub fn write_diagnostics_csv(&self, game: &Game, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "residual".to_string()];
        for c in 0..game.n_classes() {
            for u in game.policies(c).iter() {
                header.push(format!("F_{}_{}", game.class(c).name, u.label()));
            }
        }
        w.write_record(&header).map_err(csv_err)?;
        for ((t, r), f) in self.times.iter().zip(&self.residuals).zip(&self.payoffs) {
            let mut row = vec![t.to_string(), r.to_string()];
            row.extend(f.per_class.iter().flatten().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Io(format!("csv write failed: {e}")))?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(format!("csv write failed: {e}"))
}

pub(crate) fn write_trajectory_csv(game: &Game, times: &[f64], samples: &[StatePolicyDist], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "class", "state", "policy", "mass"]).map_err(csv_err)?;
    for (t, mu) in times.iter().zip(samples) {
        for c in 0..game.n_classes() {
            let class = game.class(c);
            for u in game.policies(c).iter() {
                for (s, state) in class.states.iter().enumerate() {
                    let t = t.to_string();
                    let label = u.label();
                    let mass = mu.get(c, s, u.index).to_string();
                    w.write_record([t.as_str(), class.name.as_str(), state.as_str(), label.as_str(), mass.as_str()])
                        .map_err(csv_err)?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::Io(format!("csv write failed: {e}")))?;
    Ok(())
}

/// Fixed-step integrator state shared by [`integrate`] and [`find_rest_point`].
struct Stepper<'a> {
    game: &'a Game,
    protocols: &'a [RevisionProtocol],
    method: Method,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(game: &'a Game, protocols: &'a [RevisionProtocol], method: Method, n: usize) -> Self {
        Stepper {
            game,
            protocols,
            method,
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
            scratch: vec![0.0; n],
        }
    }

    fn field(&mut self, x: &[f64], slot: usize, t: f64) -> Result<()> {
        let (game, protocols) = (self.game, self.protocols);
        field_raw(game, protocols, x, &mut self.k[slot], &mut self.scratch).map_err(|e| abort(t, e))?;
        if self.k[slot].iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationAborted {
                time: t,
                reason: "non-finite vector field".into(),
            });
        }
        Ok(())
    }

    /// Residual `||V(x)||_inf`, leaving `V(x)` in `k[0]` for reuse by the next step.
    fn residual(&mut self, x: &[f64], t: f64) -> Result<f64> {
        self.field(x, 0, t)?;
        Ok(sup_norm(&self.k[0]))
    }

    /// Advances `x` by `h`, assuming `k[0]` already holds `V(x)`.
    fn step(&mut self, x: &mut [f64], t: f64, h: f64) -> Result<()> {
        match self.method {
            Method::Euler => {
                for (xi, ki) in x.iter_mut().zip(&self.k[0]) {
                    *xi += h * ki;
                }
            }
            Method::Rk4 => {
                for (slot, frac) in [(1, 0.5), (2, 0.5), (3, 1.0)] {
                    for i in 0..x.len() {
                        self.tmp[i] = x[i] + frac * h * self.k[slot - 1][i];
                    }
                    let tmp = std::mem::take(&mut self.tmp);
                    let res = self.field(&tmp, slot, t + frac * h);
                    self.tmp = tmp;
                    res?;
                }
                for i in 0..x.len() {
                    x[i] += h / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
                }
            }
        }
        project(self.game, x, t + h)
    }
}

fn abort(t: f64, e: Error) -> Error {
    match e {
        Error::IntegrationAborted { .. } | Error::Assumption3 { .. } => e,
        other => Error::IntegrationAborted {
            time: t,
            reason: other.to_string(),
        },
    }
}

/// Clips entries in `[-NEGATIVE_TOL, 0)` and renormalizes the affected class.
fn project(game: &Game, x: &mut [f64], t: f64) -> Result<()> {
    for c in 0..game.n_classes() {
        let b = game.state_policy_layout().block(c);
        let block = &mut x[b.range()];
        let min = block.iter().copied().fold(f64::INFINITY, f64::min);
        if min.is_nan() || block.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationAborted {
                time: t,
                reason: format!("non-finite mass in class {}", game.class(c).name),
            });
        }
        if min < -NEGATIVE_TOL {
            return Err(Error::IntegrationAborted {
                time: t,
                reason: format!("entry {min} below -{NEGATIVE_TOL} in class {}; reduce the step", game.class(c).name),
            });
        }
        if min < 0.0 {
            block.iter_mut().for_each(|v| *v = v.max(0.0));
            let total: f64 = block.iter().sum();
            let mass = game.class(c).mass;
            block.iter_mut().for_each(|v| *v *= mass / total);
        }
        let total: f64 = block.iter().sum();
        if (total - game.class(c).mass).abs() > INTEGRATED_MASS_TOL {
            return Err(Error::IntegrationAborted {
                time: t,
                reason: format!("class {} mass drifted to {total}", game.class(c).name),
            });
        }
    }
    Ok(())
}

fn check_start(game: &Game, mu0: &StatePolicyDist, protocols: &[RevisionProtocol]) -> Result<()> {
    game.check_layout(mu0)?;
    check_protocols(game, protocols)
}

fn payoffs_at(game: &Game, x: &[f64], t: f64) -> Result<PayoffVector> {
    let f = payoffs_from_sa(game, &game.aggregate_unchecked(x));
    if !f.is_finite() {
        return Err(Error::IntegrationAborted {
            time: t,
            reason: "non-finite payoff".into(),
        });
    }
    Ok(f)
}

/// Integrates the mean dynamic from `mu0` over `[0, horizon]`.
pub fn integrate(
    game: &Game,
    mu0: &StatePolicyDist,
    protocols: &[RevisionProtocol],
    opts: &IntegrateOptions,
) -> Result<TrajectoryRecord> {
    check_start(game, mu0, protocols)?;
    let step = opts.step.unwrap_or_else(|| default_step(game));
    if !(opts.horizon >= 0.0) || !opts.horizon.is_finite() {
        return Err(Error::InvalidParameter(format!("horizon must be finite and >= 0, got {}", opts.horizon)));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    let n = mu0.values().len();
    let mut stepper = Stepper::new(game, protocols, opts.method, n);
    let mut x = mu0.values().to_vec();
    let n_steps = (opts.horizon / step - 1e-9).ceil().max(0.0) as usize;
    let every = opts.record_every.max(1);
    let mut rec = TrajectoryRecord {
        times: Vec::new(),
        samples: Vec::new(),
        residuals: Vec::new(),
        payoffs: Vec::new(),
        step,
        method: opts.method,
    };
    let mut t = 0.0;
    for i in 0..=n_steps {
        let residual = stepper.residual(&x, t)?;
        if i % every == 0 || i == n_steps {
            rec.payoffs.push(payoffs_at(game, &x, t)?);
            rec.times.push(t);
            rec.samples.push(StatePolicyDist::from_raw(game.state_policy_layout().clone(), game.masses(), x.clone()));
            rec.residuals.push(residual);
        }
        if i == n_steps {
            break;
        }
        let h = if i + 1 == n_steps { opts.horizon - t } else { step };
        stepper.step(&mut x, t, h)?;
        t = if i + 1 == n_steps { opts.horizon } else { (i + 1) as f64 * step };
    }
    Ok(rec)
}

#[derive(Clone, Debug)]
pub struct RestPoint {
    pub mu: StatePolicyDist,
    pub residual: f64,
    pub time: f64,
    pub converged: bool,
}

/// Integrates until `||V||_inf < tol` at a grid point or `max_time` is reached.
pub fn find_rest_point(
    game: &Game,
    mu0: &StatePolicyDist,
    protocols: &[RevisionProtocol],
    tol: f64,
    max_time: f64,
    step: Option<f64>,
) -> Result<RestPoint> {
    check_start(game, mu0, protocols)?;
    let step = step.unwrap_or_else(|| default_step(game));
    let mut stepper = Stepper::new(game, protocols, Method::Rk4, mu0.values().len());
    let mut x = mu0.values().to_vec();
    let mut t = 0.0;
    let mut i = 0usize;
    loop {
        let residual = stepper.residual(&x, t)?;
        let converged = residual < tol;
        if converged || t >= max_time {
            payoffs_at(game, &x, t)?;
            return Ok(RestPoint {
                mu: StatePolicyDist::from_raw(game.state_policy_layout().clone(), game.masses(), x),
                residual,
                time: t,
                converged,
            });
        }
        let h = step.min(max_time - t);
        stepper.step(&mut x, t, h)?;
        i += 1;
        t = (i as f64 * step).min(max_time);
    }
}
