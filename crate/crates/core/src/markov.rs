//! Policies, policy-induced kernels and generators, recurrent classes and
//! stationary distributions.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{Error, Result};
use crate::game::ClassSpec;

pub const DEFAULT_POLICY_CAP: usize = 4096;

/// Residual bound for `Q eta = 0`.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

/// A total map from states to admissible actions.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DeterministicPolicy {
    pub class: usize,
    pub index: usize,
    /// `assignment[s]` is the action index played in state `s`.
    pub assignment: Vec<usize>,
}

impl DeterministicPolicy {
    /// Canonical label, `u1`, `u2`, ... in enumeration order.
    pub fn label(&self) -> String {
        format!("u{}", self.index + 1)
    }

    pub fn action(&self, state: usize) -> usize {
        self.assignment[state]
    }
}

/// All deterministic policies of a class, lexicographic in state order (first state
/// most significant), then in admissible-action order.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySet {
    pub class: usize,
    policies: Vec<DeterministicPolicy>,
}

impl PolicySet {
    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn get(&self, index: usize) -> &DeterministicPolicy {
        &self.policies[index]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DeterministicPolicy> {
        self.policies.iter()
    }

    /// Index of the policy with the given assignment.
    pub fn position(&self, assignment: &[usize]) -> Option<usize> {
        self.policies.iter().position(|p| p.assignment == assignment)
    }
}

pub fn enumerate_policies(class_id: usize, class: &ClassSpec, cap: usize) -> Result<PolicySet> {
    let count = class
        .admissible
        .iter()
        .try_fold(1u128, |acc, a| acc.checked_mul(a.len() as u128))
        .unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(Error::PolicyCapExceeded { class: class_id, count, cap });
    }
    let n = class.n_states();
    let mut policies = Vec::with_capacity(count as usize);
    if count == 0 {
        return Ok(PolicySet { class: class_id, policies });
    }
    // odometer over per-state choices, last state fastest
    let mut digits = vec![0usize; n];
    loop {
        let assignment = digits
            .iter()
            .enumerate()
            .map(|(s, &d)| class.admissible[s][d])
            .collect();
        policies.push(DeterministicPolicy {
            class: class_id,
            index: policies.len(),
            assignment,
        });
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(PolicySet { class: class_id, policies });
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < class.admissible[pos].len() {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// `phi^{c,u}[s', s] = phi^c(s' | s, u(s))`.
pub fn policy_kernel(class: &ClassSpec, u: &DeterministicPolicy) -> DMatrix<f64> {
    let n = class.n_states();
    DMatrix::from_fn(n, n, |row, col| class.kernels[u.assignment[col]][(row, col)])
}

/// `Q^{c,u} = lambda_d (phi^{c,u} - I)`.
pub fn generator(class: &ClassSpec, u: &DeterministicPolicy) -> DMatrix<f64> {
    let k = policy_kernel(class, u);
    generator_from_kernel(&k, class.action_rate)
}

pub fn generator_from_kernel(kernel: &DMatrix<f64>, rate: f64) -> DMatrix<f64> {
    let n = kernel.nrows();
    (kernel - DMatrix::<f64>::identity(n, n)) * rate
}

/// Closed communicating classes of the positive-support digraph of a
/// column-stochastic kernel, each sorted, ordered by smallest state.
pub fn recurrent_classes(kernel: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = kernel.nrows();
    let mut g = DiGraph::<(), ()>::with_capacity(n, n * n);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for from in 0..n {
        for to in 0..n {
            if kernel[(to, from)] > 0.0 {
                g.add_edge(nodes[from], nodes[to], ());
            }
        }
    }
    let mut component = vec![0usize; n];
    let sccs = tarjan_scc(&g);
    for (i, scc) in sccs.iter().enumerate() {
        for node in scc {
            component[node.index()] = i;
        }
    }
    let mut out: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(i, scc)| {
            scc.iter().all(|node| {
                let from = node.index();
                (0..n).all(|to| kernel[(to, from)] <= 0.0 || component[to] == *i)
            })
        })
        .map(|(_, scc)| {
            let mut v: Vec<usize> = scc.iter().map(|n| n.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    out.sort_by_key(|v| v[0]);
    out
}

/// Stationary law `eta^{c,u}` of the chain induced by a deterministic policy.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryDistribution {
    pub policy: usize,
    pub eta: Vec<f64>,
}

pub fn stationary_distribution(class_id: usize, class: &ClassSpec, u: &DeterministicPolicy) -> Result<StationaryDistribution> {
    let k = policy_kernel(class, u);
    let eta = stationary_from_kernel(&k).map_err(|e| match e {
        Error::MultipleRecurrentClasses { recurrent, .. } => Error::MultipleRecurrentClasses {
            class: class_id,
            policy: u.index,
            recurrent,
        },
        other => other,
    })?;
    Ok(StationaryDistribution { policy: u.index, eta })
}

/// Unique stationary distribution of a column-stochastic kernel with exactly one
/// recurrent class: balance equations solved on the recurrent class with one row
/// replaced by normalization; transient states get zero.
pub fn stationary_from_kernel(kernel: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = kernel.nrows();
    let rec = recurrent_classes(kernel);
    if rec.len() != 1 {
        return Err(Error::MultipleRecurrentClasses {
            class: usize::MAX,
            policy: usize::MAX,
            recurrent: rec.len(),
        });
    }
    let states = &rec[0];
    let k = states.len();
    let mut a = DMatrix::from_fn(k, k, |i, j| {
        let v = kernel[(states[i], states[j])];
        if i == j {
            v - 1.0
        } else {
            v
        }
    });
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(k);
    rhs[k - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Unsupported("singular balance system on the recurrent class".into()))?;
    let mut eta = vec![0.0; n];
    for (i, &s) in states.iter().enumerate() {
        // roundoff can leave -1e-17 on tiny masses
        eta[s] = sol[i].max(0.0);
    }
    let total: f64 = eta.iter().sum();
    eta.iter_mut().for_each(|v| *v /= total);
    Ok(eta)
}

/// `max_s |(Q eta)_s|`.
pub fn balance_residual(generator: &DMatrix<f64>, eta: &[f64]) -> f64 {
    let v = generator * DVector::from_column_slice(eta);
    v.amax()
}

/// A randomized (behavioral) policy: `probs[s][a] = u(a | s)` over class actions.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomizedPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl RandomizedPolicy {
    pub fn from_deterministic(class: &ClassSpec, u: &DeterministicPolicy) -> Self {
        let probs = u
            .assignment
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; class.n_actions()];
                row[a] = 1.0;
                row
            })
            .collect();
        RandomizedPolicy { probs }
    }

    pub fn validate(&self, class: &ClassSpec) -> Result<()> {
        if self.probs.len() != class.n_states() {
            return Err(Error::DimensionMismatch {
                what: "randomized policy states",
                expected: class.n_states(),
                found: self.probs.len(),
            });
        }
        for (s, row) in self.probs.iter().enumerate() {
            if row.len() != class.n_actions() {
                return Err(Error::DimensionMismatch {
                    what: "randomized policy actions",
                    expected: class.n_actions(),
                    found: row.len(),
                });
            }
            for (a, &p) in row.iter().enumerate() {
                if p < 0.0 || (p > 0.0 && !class.is_admissible(s, a)) {
                    return Err(Error::InvalidParameter(format!(
                        "randomized policy puts {p} on action {a} in state {s}"
                    )));
                }
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "randomized policy row {s} sums to {total}"
                )));
            }
        }
        Ok(())
    }

    /// `phi^{c,u}[s', s] = sum_a phi(s' | s, a) u(a | s)`.
    pub fn kernel(&self, class: &ClassSpec) -> DMatrix<f64> {
        let n = class.n_states();
        DMatrix::from_fn(n, n, |row, col| {
            self.probs[col]
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(a, p)| p * class.kernels[a][(row, col)])
                .sum()
        })
    }
}
