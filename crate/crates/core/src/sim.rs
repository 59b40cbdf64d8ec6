//! Finite-population simulation with Poisson action and revision clocks.
//!
//! All clocks are superposed into one exponential clock of rate
//! `sum_c |C_c| (lambda_d^c + lambda_r^c)`; each event picks a class in proportion to its
//! rate, a uniform player of that class, and the clock type in proportion to
//! `(lambda_d, lambda_r)`. Revision clocks are left out when a class's protocol is null,
//! since such events never change anything.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dist::{Layout, MarginalPolicyDist, StateActionDist, StatePolicyDist};
use crate::dynamics::{csv_err, integrate, write_trajectory_csv, IntegrateOptions};
use crate::error::{Error, Result};
use crate::game::Game;
use crate::par::Exec;
use crate::payoffs::payoffs_from_sa;
use crate::revision::RevisionProtocol;

/// Integer apportionment of `total` proportional to `weights` by largest remainders;
/// ties go to the lower index.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Player {
    pub class: usize,
    pub state: usize,
    pub policy: usize,
}

/// Players grouped by class, with cell counts of the empirical distributions.
#[derive(Clone, Debug)]
pub struct PopulationState {
    players: Vec<Player>,
    class_start: Vec<usize>,
    class_size: Vec<usize>,
    sp_layout: Layout,
    sa_layout: Layout,
    sp_counts: Vec<u64>,
    sa_counts: Vec<u64>,
    /// `action_of[c][u][s]`.
    action_of: Vec<Vec<Vec<usize>>>,
}

impl PopulationState {
    /// Rounds `N mu0` to integer counts: class sizes first, then cells within each class.
    pub fn from_distribution(game: &Game, mu0: &StatePolicyDist, n: usize) -> Result<Self> {
        if mu0.layout() != game.state_policy_layout() {
            return Err(Error::DimensionMismatch {
                what: "state-policy layout",
                expected: game.state_policy_layout().len(),
                found: mu0.layout().len(),
            });
        }
        let sizes = apportion(n, &game.masses());
        let mut players = Vec::with_capacity(n);
        for (c, &size) in sizes.iter().enumerate() {
            if size == 0 {
                return Err(Error::Simulation(format!(
                    "N = {n} leaves class {} without players",
                    game.class(c).name
                )));
            }
            let b = game.state_policy_layout().block(c);
            let cells = apportion(size, mu0.class_values(c));
            for u in 0..b.cols {
                for s in 0..b.rows {
                    for _ in 0..cells[u * b.rows + s] {
                        players.push(Player { class: c, state: s, policy: u });
                    }
                }
            }
        }
        Self::from_players(game, players)
    }

    /// Rounds policy counts first, so `|n_u / N - x^c[u]| < 1/N`, then spreads each
    /// policy's players over states by `eta^{c,u}`.
    pub fn from_marginal(game: &Game, x: &MarginalPolicyDist, n: usize) -> Result<Self> {
        let sizes = apportion(n, &game.masses());
        let mut players = Vec::with_capacity(n);
        for (c, &size) in sizes.iter().enumerate() {
            let per_policy = apportion(size, x.class(c));
            for (u, &k) in per_policy.iter().enumerate() {
                let per_state = apportion(k, &game.stationary(c, u).eta);
                for (s, &m) in per_state.iter().enumerate() {
                    players.extend(std::iter::repeat(Player { class: c, state: s, policy: u }).take(m));
                }
            }
        }
        Self::from_players(game, players)
    }

    /// Players must be grouped by class in class order, each class nonempty.
    pub fn from_players(game: &Game, players: Vec<Player>) -> Result<Self> {
        let n_classes = game.n_classes();
        let mut class_size = vec![0usize; n_classes];
        let mut last = 0usize;
        for p in &players {
            if p.class >= n_classes || p.class < last {
                return Err(Error::Simulation("players must be grouped by class in class order".into()));
            }
            if p.state >= game.class(p.class).n_states() || p.policy >= game.n_policies(p.class) {
                return Err(Error::Simulation(format!("player {p:?} is out of range")));
            }
            last = p.class;
            class_size[p.class] += 1;
        }
        if let Some(c) = class_size.iter().position(|s| *s == 0) {
            return Err(Error::Simulation(format!("class {} has no players", game.class(c).name)));
        }
        let mut class_start = vec![0usize; n_classes];
        for c in 1..n_classes {
            class_start[c] = class_start[c - 1] + class_size[c - 1];
        }
        let action_of = (0..n_classes)
            .map(|c| game.policies(c).iter().map(|u| u.assignment.clone()).collect())
            .collect();
        let mut pop = PopulationState {
            sp_counts: vec![0; game.state_policy_layout().len()],
            sa_counts: vec![0; game.state_action_layout().len()],
            sp_layout: game.state_policy_layout().clone(),
            sa_layout: game.state_action_layout().clone(),
            players,
            class_start,
            class_size,
            action_of,
        };
        for i in 0..pop.players.len() {
            pop.add(pop.players[i], 1);
        }
        Ok(pop)
    }

    fn add(&mut self, p: Player, sign: i64) {
        let sp = self.sp_layout.block(p.class);
        let sa = self.sa_layout.block(p.class);
        let a = self.action_of[p.class][p.policy][p.state];
        let i = sp.offset + p.policy * sp.rows + p.state;
        let j = sa.offset + p.state * sa.cols + a;
        self.sp_counts[i] = (self.sp_counts[i] as i64 + sign) as u64;
        self.sa_counts[j] = (self.sa_counts[j] as i64 + sign) as u64;
    }

    fn set(&mut self, i: usize, state: usize, policy: usize) {
        let old = self.players[i];
        self.add(old, -1);
        let new = Player { state, policy, ..old };
        self.players[i] = new;
        self.add(new, 1);
    }

    pub fn n(&self) -> usize {
        self.players.len()
    }

    pub fn players(&self) -> &[Player] {
        &self.players
    }

    pub fn class_size(&self, c: usize) -> usize {
        self.class_size[c]
    }

    /// Index of the `k`-th player of class `c`.
    pub fn player_index(&self, c: usize, k: usize) -> usize {
        self.class_start[c] + k
    }

    pub fn class_masses(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.class_size.iter().map(|s| *s as f64 / n).collect()
    }

    /// Empirical state-policy distribution (entries are multiples of `1/N`).
    pub fn empirical(&self) -> StatePolicyDist {
        let n = self.n() as f64;
        StatePolicyDist::from_raw(
            self.sp_layout.clone(),
            self.class_masses(),
            self.sp_counts.iter().map(|k| *k as f64 / n).collect(),
        )
    }

    pub fn empirical_sa(&self) -> StateActionDist {
        let n = self.n() as f64;
        StateActionDist::from_raw(self.sa_layout.clone(), self.sa_counts.iter().map(|k| *k as f64 / n).collect())
    }

    pub fn counts(&self) -> &[u64] {
        &self.sp_counts
    }
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub n: usize,
    pub seed: u64,
    /// Stream id of the replication; one stream per replication.
    pub stream: u64,
    pub horizon: f64,
    /// Sample times in `[0, horizon]`, ascending.
    pub grid: Vec<f64>,
    /// Abort when a switch-rate row sum exceeds the revision rate.
    pub strict: bool,
}

impl SimOptions {
    pub fn new(n: usize, horizon: f64, grid_step: f64) -> Self {
        SimOptions {
            n,
            seed: 0,
            stream: 0,
            horizon,
            grid: uniform_grid(horizon, grid_step),
            strict: false,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }
}

/// `0, step, 2 step, ...` up to and including `horizon` (within rounding).
pub fn uniform_grid(horizon: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) {
        return vec![0.0];
    }
    let k = (horizon / step + 1e-9).floor() as usize;
    (0..=k).map(|i| (i as f64 * step).min(horizon)).collect()
}

#[derive(Clone, Debug)]
pub struct EmpiricalTrajectory {
    pub n: usize,
    pub times: Vec<f64>,
    pub samples: Vec<StatePolicyDist>,
    pub action_events: u64,
    pub revision_events: u64,
    pub switches: u64,
    /// Revision events whose switch-rate row sum exceeded the revision rate.
    pub assumption3_warnings: u64,
    /// Action events per player.
    pub actions_per_player: Vec<u32>,
}

impl EmpiricalTrajectory {
    pub fn write_csv(&self, game: &Game, out: impl Write) -> Result<()> {
        write_trajectory_csv(game, &self.times, &self.samples, out)
    }
}

struct Engine<'a> {
    game: &'a Game,
    protocols: &'a [RevisionProtocol],
    pop: PopulationState,
    rng: ChaCha8Rng,
    class_rate: Vec<f64>,
    action_share: Vec<f64>,
    total_rate: f64,
    strict: bool,
    stats: EventStats,
    tagged: Option<usize>,
    tagged_rewards: Vec<f64>,
    record_from: f64,
}

#[derive(Default)]
struct EventStats {
    actions: u64,
    revisions: u64,
    switches: u64,
    warnings: u64,
    per_player: Vec<u32>,
}

impl<'a> Engine<'a> {
    fn new(game: &'a Game, protocols: &'a [RevisionProtocol], pop: PopulationState, seed: u64, stream: u64, strict: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut class_rate = Vec::with_capacity(game.n_classes());
        let mut action_share = Vec::with_capacity(game.n_classes());
        for c in 0..game.n_classes() {
            let class = game.class(c);
            let rev = if protocols[c].is_null() { 0.0 } else { class.revision_rate };
            class_rate.push(pop.class_size(c) as f64 * (class.action_rate + rev));
            action_share.push(class.action_rate / (class.action_rate + rev));
        }
        let total_rate = class_rate.iter().sum();
        let n = pop.n();
        Engine {
            game,
            protocols,
            pop,
            rng,
            class_rate,
            action_share,
            total_rate,
            strict,
            stats: EventStats { per_player: vec![0; n], ..Default::default() },
            tagged: None,
            tagged_rewards: Vec::new(),
            record_from: 0.0,
        }
    }

    fn next_time(&mut self, t: f64) -> f64 {
        let u: f64 = self.rng.gen();
        t - (1.0 - u).ln() / self.total_rate
    }

    fn event(&mut self, t: f64) -> Result<()> {
        let pick: f64 = self.rng.gen::<f64>() * self.total_rate;
        let mut c = 0;
        let mut acc = self.class_rate[0];
        while pick >= acc && c + 1 < self.class_rate.len() {
            c += 1;
            acc += self.class_rate[c];
        }
        let size = self.pop.class_size(c);
        let k = ((self.rng.gen::<f64>() * size as f64) as usize).min(size - 1);
        let i = self.pop.player_index(c, k);
        let is_action = self.action_share[c] >= 1.0 || self.rng.gen::<f64>() < self.action_share[c];
        if is_action {
            self.action(i, c, t)
        } else {
            self.revision(i, c)
        }
    }

    fn action(&mut self, i: usize, c: usize, t: f64) -> Result<()> {
        let p = self.pop.players[i];
        self.stats.actions += 1;
        self.stats.per_player[i] += 1;
        if self.tagged == Some(i) && t >= self.record_from {
            let a = self.pop.action_of[c][p.policy][p.state];
            let sa = self.pop.empirical_sa();
            self.tagged_rewards.push(self.game.reward(c, p.state, a, &sa));
        }
        let kernel = self.game.policy_kernel(c, p.policy);
        let u: f64 = self.rng.gen();
        let mut next = kernel.nrows() - 1;
        let mut acc = 0.0;
        for s in 0..kernel.nrows() {
            acc += kernel[(s, p.state)];
            if u < acc {
                next = s;
                break;
            }
        }
        if next != p.state {
            self.pop.set(i, next, p.policy);
        }
        Ok(())
    }

    fn revision(&mut self, i: usize, c: usize) -> Result<()> {
        self.stats.revisions += 1;
        let p = self.pop.players[i];
        let sa = self.pop.empirical_sa();
        let payoffs = payoffs_from_sa(self.game, &sa);
        let b = self.pop.sp_layout.block(c);
        let n = self.pop.n() as f64;
        let sigma: Vec<f64> = (0..b.cols)
            .map(|u| self.pop.sp_counts[b.offset + u * b.rows..b.offset + (u + 1) * b.rows].iter().sum::<u64>() as f64 / n)
            .collect();
        let mass = self.pop.class_size(c) as f64 / n;
        let rates = self
            .protocols[c]
            .eval_rates(payoffs.class(c), &sigma, mass)
            .map_err(|e| Error::Simulation(format!("revision protocol failed: {e}")))?;
        let lambda_r = self.game.class(c).revision_rate;
        let row_sum = rates.out_rate(p.policy);
        let mut budget = lambda_r;
        if row_sum > lambda_r + 1e-12 {
            if self.strict {
                return Err(Error::Assumption3 {
                    class: c,
                    policy: p.policy,
                    row_sum,
                    revision_rate: lambda_r,
                });
            }
            self.stats.warnings += 1;
            budget = row_sum;
        }
        let draw: f64 = self.rng.gen::<f64>() * budget;
        let mut acc = 0.0;
        for v in (0..b.cols).filter(|&v| v != p.policy) {
            acc += rates.rate(p.policy, v);
            if draw < acc {
                self.pop.set(i, p.state, v);
                self.stats.switches += 1;
                break;
            }
        }
        Ok(())
    }
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

/// Simulates `N` players from the rounded `mu0` and samples the empirical distribution on
/// the grid.
pub fn simulate(game: &Game, protocols: &[RevisionProtocol], mu0: &StatePolicyDist, opts: &SimOptions) -> Result<EmpiricalTrajectory> {
    if opts.n == 0 {
        return Err(Error::Simulation("N must be at least 1".into()));
    }
    let pop = PopulationState::from_distribution(game, mu0, opts.n)?;
    simulate_population(game, protocols, pop, opts)
}

pub fn simulate_population(game: &Game, protocols: &[RevisionProtocol], pop: PopulationState, opts: &SimOptions) -> Result<EmpiricalTrajectory> {
    check_protocols(game, protocols)?;
    if !(opts.horizon >= 0.0) || !opts.horizon.is_finite() {
        return Err(Error::InvalidParameter(format!("horizon must be finite and >= 0, got {}", opts.horizon)));
    }
    let n = pop.n();
    let mut engine = Engine::new(game, protocols, pop, opts.seed, opts.stream, opts.strict);
    let grid: Vec<f64> = opts.grid.iter().copied().filter(|t| *t <= opts.horizon).collect();
    let mut times = Vec::with_capacity(grid.len());
    let mut samples = Vec::with_capacity(grid.len());
    let mut k = 0;
    let mut t = 0.0;
    loop {
        let next = engine.next_time(t);
        while k < grid.len() && grid[k] < next {
            times.push(grid[k]);
            samples.push(engine.pop.empirical());
            k += 1;
        }
        if next > opts.horizon {
            break;
        }
        engine.event(next)?;
        t = next;
    }
    Ok(EmpiricalTrajectory {
        n,
        times,
        samples,
        action_events: engine.stats.actions,
        revision_events: engine.stats.revisions,
        switches: engine.stats.switches,
        assumption3_warnings: engine.stats.warnings,
        actions_per_player: engine.stats.per_player,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyRow {
    pub n: usize,
    pub mean_sup_deviation: f64,
    pub std_error: f64,
    pub per_replication: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StudyOptions {
    pub ns: Vec<usize>,
    pub replications: usize,
    pub horizon: f64,
    pub grid_step: f64,
    pub seed: u64,
    pub exec: Exec,
}

/// Mean over replications of `sup_t ||mu_hat(t) - mu(t)||_inf` against the mean dynamic,
/// for each population size.
pub fn convergence_study(game: &Game, protocols: &[RevisionProtocol], mu0: &StatePolicyDist, opts: &StudyOptions) -> Result<Vec<StudyRow>> {
    check_protocols(game, protocols)?;
    let grid = uniform_grid(opts.horizon, opts.grid_step);
    let ode = ode_on_grid(game, protocols, mu0, &grid)?;
    let jobs: Vec<(usize, usize)> = (0..opts.ns.len()).flat_map(|i| (0..opts.replications).map(move |r| (i, r))).collect();
    let results = opts.exec.map(jobs.len(), |j| -> Result<f64> {
        let (i, r) = jobs[j];
        let sim_opts = SimOptions {
            n: opts.ns[i],
            seed: opts.seed,
            stream: ((i as u64) << 32) | r as u64,
            horizon: opts.horizon,
            grid: grid.clone(),
            strict: false,
        };
        let traj = simulate(game, protocols, mu0, &sim_opts)?;
        Ok(traj
            .samples
            .iter()
            .zip(&ode)
            .map(|(a, b)| a.sup_distance(b))
            .fold(0.0, f64::max))
    });
    let mut rows = Vec::with_capacity(opts.ns.len());
    for (i, &n) in opts.ns.iter().enumerate() {
        let per_replication = results[i * opts.replications..(i + 1) * opts.replications]
            .iter()
            .map(|r| r.as_ref().copied().map_err(|e| Error::Simulation(e.to_string())))
            .collect::<Result<Vec<f64>>>()?;
        let (mean, se) = mean_and_stderr(&per_replication);
        rows.push(StudyRow { n, mean_sup_deviation: mean, std_error: se, per_replication });
    }
    Ok(rows)
}

/// Mean-dynamic solution sampled exactly on `grid`.
pub fn ode_on_grid(game: &Game, protocols: &[RevisionProtocol], mu0: &StatePolicyDist, grid: &[f64]) -> Result<Vec<StatePolicyDist>> {
    let base = crate::dynamics::default_step(game);
    let mut out = Vec::with_capacity(grid.len());
    let mut mu = mu0.clone();
    let mut t = 0.0;
    for &g in grid {
        let dt = g - t;
        if dt > 0.0 {
            let steps = (dt / base).ceil().max(1.0);
            let opts = IntegrateOptions::new(dt).step(dt / steps).record_every(usize::MAX);
            mu = integrate(game, &mu, protocols, &opts)?.endpoint().clone();
            t = g;
        }
        out.push(mu.clone());
    }
    Ok(out)
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn write_study_csv(rows: &[StudyRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "rep", "sup_deviation"]).map_err(csv_err)?;
    for row in rows {
        for (r, d) in row.per_replication.iter().enumerate() {
            w.write_record([row.n.to_string(), r.to_string(), d.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Simulation(format!("csv write failed: {e}")))?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PayoffEstimateOptions {
    pub horizon: f64,
    pub burn_in: f64,
    pub replications: usize,
    pub seed: u64,
    pub exec: Exec,
}

#[derive(Clone, Debug, Serialize)]
pub struct PayoffEstimate {
    pub keep: f64,
    pub deviate: f64,
    /// `deviate - keep`.
    pub gain: f64,
    pub stderr_keep: f64,
    pub stderr_deviate: f64,
    /// Standard error of the paired difference.
    pub stderr_gain: f64,
    /// Smallest number of reward samples collected in any run.
    pub min_samples: usize,
}

/// Long-run average reward of player `tagged` keeping its policy versus switching to
/// `deviation`, with all policies fixed (no revision).
///
/// Each replication runs the keep and deviate populations on the same random stream.
/// Without revision, the other players' paths do not depend on the tagged player, so
/// the two runs differ only through the tagged player's own actions.
pub fn estimate_average_payoff(
    game: &Game,
    population: &PopulationState,
    tagged: usize,
    deviation: usize,
    opts: &PayoffEstimateOptions,
) -> Result<PayoffEstimate> {
    if tagged >= population.n() {
        return Err(Error::Simulation(format!("tagged player {tagged} out of range")));
    }
    let class = population.players()[tagged].class;
    if deviation >= game.n_policies(class) {
        return Err(Error::Simulation(format!("deviation policy {deviation} out of range")));
    }
    if !(opts.horizon > opts.burn_in) {
        return Err(Error::InvalidParameter("horizon must exceed burn-in".into()));
    }
    let protocols: Vec<RevisionProtocol> = (0..game.n_classes()).map(|_| crate::revision::make_null()).collect();
    let mut deviated = population.clone();
    let p = deviated.players()[tagged];
    deviated.set(tagged, p.state, deviation);

    let run = |pop: &PopulationState, stream: u64| -> Result<(f64, usize)> {
        let mut engine = Engine::new(game, &protocols, pop.clone(), opts.seed, stream, false);
        engine.tagged = Some(tagged);
        engine.record_from = opts.burn_in;
        let mut t = 0.0;
        loop {
            let next = engine.next_time(t);
            if next > opts.horizon {
                break;
            }
            engine.event(next)?;
            t = next;
        }
        let k = engine.tagged_rewards.len();
        if k < 100 {
            return Err(Error::Simulation(format!(
                "only {k} reward samples for the tagged player after burn-in; increase the horizon"
            )));
        }
        Ok((engine.tagged_rewards.iter().sum::<f64>() / k as f64, k))
    };
    let results = opts.exec.map(opts.replications.max(1), |r| -> Result<(f64, f64, usize)> {
        let (keep, k1) = run(population, r as u64)?;
        let (dev, k2) = run(&deviated, r as u64)?;
        Ok((keep, dev, k1.min(k2)))
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let keeps: Vec<f64> = results.iter().map(|r| r.0).collect();
    let devs: Vec<f64> = results.iter().map(|r| r.1).collect();
    let gains: Vec<f64> = results.iter().map(|r| r.1 - r.0).collect();
    let (keep, se_keep) = mean_and_stderr(&keeps);
    let (deviate, se_dev) = mean_and_stderr(&devs);
    let (gain, se_gain) = mean_and_stderr(&gains);
    Ok(PayoffEstimate {
        keep,
        deviate,
        gain,
        stderr_keep: se_keep,
        stderr_deviate: se_dev,
        stderr_gain: se_gain,
        min_samples: results.iter().map(|r| r.2).min().unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::example3;

    #[test]
    fn apportionment() {
        assert_eq!(apportion(10, &[0.2, 0.8]), vec![2, 8]);
        assert_eq!(apportion(3, &[1.0, 1.0]), vec![2, 1]);
        assert_eq!(apportion(7, &[0.08, 0.12, 0.56, 0.24]).iter().sum::<usize>(), 7);
        assert_eq!(apportion(5, &[0.0, 0.0]), vec![0, 0]);
    }

    #[test]
    fn population_counts_match_distribution() {
        let ex = example3::build();
        let pop = PopulationState::from_distribution(&ex.game, &ex.mu_fig1, 100).unwrap();
        assert_eq!(pop.counts(), &[8, 12, 56, 24]);
        assert_eq!(pop.empirical().values(), ex.mu_fig1.values());
    }

    #[test]
    fn same_seed_same_path() {
        let ex = example3::build();
        let p = [ex.protocol.clone()];
        let opts = SimOptions::new(200, 2.0, 0.5).seed(7).stream(3);
        let a = simulate(&ex.game, &p, &ex.mu_fig2, &opts).unwrap();
        let b = simulate(&ex.game, &p, &ex.mu_fig2, &opts).unwrap();
        assert_eq!(a.times, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.values(), y.values());
        }
        let c = simulate(&ex.game, &p, &ex.mu_fig2, &opts.clone().stream(4)).unwrap();
        assert!(a.samples.iter().zip(&c.samples).any(|(x, y)| x.values() != y.values()));
    }

    #[test]
    fn constant_reward_estimates_exactly() {
        let ex = example3::build();
        let pop = PopulationState::from_distribution(&ex.game, &ex.mu_fig1, 50).unwrap();
        let opts = PayoffEstimateOptions { horizon: 200.0, burn_in: 10.0, replications: 3, seed: 1, exec: Exec::Sequential };
        let est = estimate_average_payoff(&ex.game, &pop, 0, 1, &opts).unwrap();
        assert_eq!((est.keep, est.deviate, est.gain), (1.0, 1.0, 0.0));
        let short = PayoffEstimateOptions { horizon: 20.0, ..opts };
        assert!(estimate_average_payoff(&ex.game, &pop, 0, 1, &short).is_err());
    }
}
