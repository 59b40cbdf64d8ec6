//! Dense per-class distributions over (state, policy) and (state, action) cells.
//!
//! All vectors are stored flat, one contiguous block per class:
//!
//! * [`StatePolicyDist`] blocks are policy-major: the state masses of policy `u`
//!   are contiguous, so cell `(s, u)` lives at `offset + u * n_states + s`.
//! * [`StateActionDist`] blocks are state-major: cell `(s, a)` lives at
//!   `offset + s * n_actions + a`.
//!
//! Masses are absolute (`sum = m^c` per class), not conditional.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Mass tolerance right after construction.
pub const MASS_TOL: f64 = 1e-12;
/// Mass tolerance for states produced by numerical integration.
pub const INTEGRATED_MASS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Shape of a flat per-class vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    blocks: Arc<[Block]>,
    len: usize,
}

impl Layout {
    /// Builds a layout from `(rows, cols)` per class.
    pub fn new(dims: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut offset = 0;
        let blocks: Vec<Block> = dims
            .into_iter()
            .map(|(rows, cols)| {
                let b = Block { rows, cols, offset };
                offset += rows * cols;
                b
            })
            .collect();
        Layout {
            blocks: blocks.into(),
            len: offset,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, class: usize) -> Block {
        self.blocks[class]
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn check_block_masses(layout: &Layout, masses: &[f64], values: &[f64], tol: f64) -> Result<()> {
    if masses.len() != layout.n_classes() {
        return Err(Error::DimensionMismatch {
            what: "class masses",
            expected: layout.n_classes(),
            found: masses.len(),
        });
    }
    if values.len() != layout.len() {
        return Err(Error::DimensionMismatch {
            what: "distribution length",
            expected: layout.len(),
            found: values.len(),
        });
    }
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidDistribution(format!("entry {i} is not finite")));
        }
        if v < 0.0 {
            return Err(Error::InvalidDistribution(format!("entry {i} is negative ({v})")));
        }
    }
    for (c, (block, &m)) in layout.blocks().iter().zip(masses).enumerate() {
        let total: f64 = values[block.range()].iter().sum();
        if (total - m).abs() > tol {
            return Err(Error::InvalidDistribution(format!(
                "class {c} carries mass {total}, expected {m}"
            )));
        }
    }
    Ok(())
}

/// Joint state-policy distribution `mu^c[s, u]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePolicyDist {
    layout: Layout,
    masses: Vec<f64>,
    values: Vec<f64>,
}

impl StatePolicyDist {
    /// Validated constructor (nonnegative, class masses within [`MASS_TOL`]).
    pub fn new(layout: Layout, masses: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(layout, masses, values, MASS_TOL)
    }

    pub fn with_tolerance(layout: Layout, masses: Vec<f64>, values: Vec<f64>, tol: f64) -> Result<Self> {
        check_block_masses(&layout, &masses, &values, tol)?;
        Ok(StatePolicyDist {
            layout,
            masses,
            values,
        })
    }

    /// No checks; for intermediate states and flow-shaped vectors.
    pub(crate) fn from_raw(layout: Layout, masses: Vec<f64>, values: Vec<f64>) -> Self {
        debug_assert_eq!(layout.len(), values.len());
        StatePolicyDist {
            layout,
            masses,
            values,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn n_classes(&self) -> usize {
        self.layout.n_classes()
    }

    pub fn n_states(&self, class: usize) -> usize {
        self.layout.block(class).rows
    }

    pub fn n_policies(&self, class: usize) -> usize {
        self.layout.block(class).cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn class_values(&self, class: usize) -> &[f64] {
        &self.values[self.layout.block(class).range()]
    }

    /// State masses of policy `u` in class `c` (length `n_states`).
    pub fn policy_column(&self, class: usize, policy: usize) -> &[f64] {
        let b = self.layout.block(class);
        let start = b.offset + policy * b.rows;
        &self.values[start..start + b.rows]
    }

    pub fn index(&self, class: usize, state: usize, policy: usize) -> usize {
        let b = self.layout.block(class);
        debug_assert!(state < b.rows && policy < b.cols);
        b.offset + policy * b.rows + state
    }

    pub fn get(&self, class: usize, state: usize, policy: usize) -> f64 {
        self.values[self.index(class, state, policy)]
    }

    /// Per-class policy marginals `mu^c[S^c, u]`.
    pub fn marginal_policy(&self) -> MarginalPolicyDist {
        let per_class = (0..self.n_classes())
            .map(|c| {
                (0..self.n_policies(c))
                    .map(|u| self.policy_column(c, u).iter().sum())
                    .collect()
            })
            .collect();
        MarginalPolicyDist {
            masses: self.masses.clone(),
            per_class,
        }
    }

    /// Largest per-class mass defect `|sum - m^c|`.
    pub fn mass_defect(&self) -> f64 {
        self.layout
            .blocks()
            .iter()
            .zip(&self.masses)
            .map(|(b, m)| (self.values[b.range()].iter().sum::<f64>() - m).abs())
            .fold(0.0, f64::max)
    }

    /// Total-variation distance (half the l1 norm of the difference).
    pub fn total_variation(&self, other: &StatePolicyDist) -> f64 {
        0.5 * self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    /// Sup-norm distance.
    pub fn sup_distance(&self, other: &StatePolicyDist) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Joint state-action distribution `mu^c_{S x A}[s, a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateActionDist {
    layout: Layout,
    values: Vec<f64>,
}

impl StateActionDist {
    pub(crate) fn from_raw(layout: Layout, values: Vec<f64>) -> Self {
        debug_assert_eq!(layout.len(), values.len());
        StateActionDist { layout, values }
    }

    /// Builds from explicit values; entries must be finite and nonnegative.
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                what: "state-action distribution length",
                expected: layout.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "state-action entry {i} is {}",
                values[i]
            )));
        }
        Ok(StateActionDist { layout, values })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn index(&self, class: usize, state: usize, action: usize) -> usize {
        let b = self.layout.block(class);
        b.offset + state * b.cols + action
    }

    pub fn get(&self, class: usize, state: usize, action: usize) -> f64 {
        self.values[self.index(class, state, action)]
    }

    pub fn class_values(&self, class: usize) -> &[f64] {
        &self.values[self.layout.block(class).range()]
    }

    /// Mass of class `c` on action `a`, summed over states.
    pub fn action_mass(&self, class: usize, action: usize) -> f64 {
        let b = self.layout.block(class);
        (0..b.rows).map(|s| self.values[b.offset + s * b.cols + action]).sum()
    }

    pub fn class_mass(&self, class: usize) -> f64 {
        self.class_values(class).iter().sum()
    }
}

/// Per-class policy marginals `x^c`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalPolicyDist {
    masses: Vec<f64>,
    per_class: Vec<Vec<f64>>,
}

impl MarginalPolicyDist {
    pub fn new(masses: Vec<f64>, per_class: Vec<Vec<f64>>) -> Result<Self> {
        if masses.len() != per_class.len() {
            return Err(Error::DimensionMismatch {
                what: "marginal classes",
                expected: masses.len(),
                found: per_class.len(),
            });
        }
        for (c, (x, m)) in per_class.iter().zip(&masses).enumerate() {
            if let Some(v) = x.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "class {c} marginal has entry {v}"
                )));
            }
            let total: f64 = x.iter().sum();
            if (total - m).abs() > MASS_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "class {c} marginal sums to {total}, expected {m}"
                )));
            }
        }
        Ok(MarginalPolicyDist { masses, per_class })
    }

    pub(crate) fn from_raw(masses: Vec<f64>, per_class: Vec<Vec<f64>>) -> Self {
        MarginalPolicyDist { masses, per_class }
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn class(&self, class: usize) -> &[f64] {
        &self.per_class[class]
    }

    pub fn classes(&self) -> &[Vec<f64>] {
        &self.per_class
    }

    pub fn n_classes(&self) -> usize {
        self.per_class.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets_are_contiguous() {
        let l = Layout::new([(2, 2), (3, 8)]);
        assert_eq!(l.block(0).offset, 0);
        assert_eq!(l.block(1).offset, 4);
        assert_eq!(l.len(), 28);
    }

    #[test]
    fn constructor_rejects_negative_and_wrong_mass() {
        let l = Layout::new([(2, 2)]);
        assert!(StatePolicyDist::new(l.clone(), vec![1.0], vec![0.5, 0.5, 0.1, -0.1]).is_err());
        assert!(StatePolicyDist::new(l.clone(), vec![1.0], vec![0.5, 0.5, 0.1, 0.0]).is_err());
        assert!(StatePolicyDist::new(l, vec![1.0], vec![0.08, 0.12, 0.56, 0.24]).is_ok());
    }

    #[test]
    fn marginals_are_policy_column_sums() {
        let l = Layout::new([(2, 2)]);
        let mu = StatePolicyDist::new(l.clone(), vec![1.0], vec![0.08, 0.12, 0.56, 0.24]).unwrap();
        let x = mu.marginal_policy();
        assert!((x.class(0)[0] - 0.2).abs() < 1e-15);
        assert!((x.class(0)[1] - 0.8).abs() < 1e-15);

        let mu = StatePolicyDist::new(l.clone(), vec![1.0], vec![0.30, 0.30, 0.25, 0.15]).unwrap();
        let x = mu.marginal_policy();
        assert!((x.class(0)[0] - 0.6).abs() < 1e-15);
        assert!((x.class(0)[1] - 0.4).abs() < 1e-15);

        let mu = StatePolicyDist::new(l, vec![1.0], vec![0.25; 4]).unwrap();
        let x = mu.marginal_policy();
        assert_eq!(x.class(0)[0], x.class(0)[1]);
    }
}
