//! Distributions, CVaR, Wasserstein distance, and the distributionally
//! robust safety machinery: worst-case risk bounds over Wasserstein balls,
//! membership oracles, and per-facet inner-approximation offsets.

mod reform;

pub use reform::{
    inner_offsets, member_x_wass, worst_case_cvar_lb_oracle, worst_case_cvar_ub, RiskMultipliers,
    WorstCaseRisk,
};

use crate::conic::{self, ConicError, ProgramBuilder, SolveStatus};
use crate::geometry::Polytope;
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid risk level beta = {0}; need 0 < beta < 1")]
    InvalidBeta(f64),
    #[error("empty value list")]
    Empty,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl From<ConicError> for RiskError {
    fn from(e: ConicError) -> Self {
        RiskError::Numerical(e.to_string())
    }
}

impl From<crate::geometry::GeometryError> for RiskError {
    fn from(e: crate::geometry::GeometryError) -> Self {
        RiskError::Numerical(e.to_string())
    }
}

/// Weighted atom list supported on a displacement polytope.
#[derive(Debug, Clone)]
pub struct DiscreteDistribution {
    atoms: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    /// Validates positivity, normalization (1e-12) and support membership.
    pub fn new(
        atoms: Vec<DVector<f64>>,
        weights: Vec<f64>,
        support: &Polytope,
    ) -> Result<Self, RiskError> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(RiskError::InvalidDistribution(format!(
                "{} atoms vs {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(RiskError::InvalidDistribution(format!(
                "weights sum to {total}"
            )));
        }
        for (i, w) in weights.iter().enumerate() {
            if !(*w > 0.0) {
                return Err(RiskError::InvalidDistribution(format!(
                    "weight {i} = {w} not strictly positive"
                )));
            }
        }
        for (i, a) in atoms.iter().enumerate() {
            if a.len() != support.dim() {
                return Err(RiskError::DimensionMismatch(format!(
                    "atom {i} has dim {}",
                    a.len()
                )));
            }
            if !support.contains(a, 1e-9) {
                return Err(RiskError::InvalidDistribution(format!(
                    "atom {i} outside the support set"
                )));
            }
        }
        Ok(DiscreteDistribution { atoms, weights })
    }

    /// Uniform empirical distribution over samples.
    pub fn empirical(samples: &[DVector<f64>], support: &Polytope) -> Result<Self, RiskError> {
        let n = samples.len();
        if n == 0 {
            return Err(RiskError::Empty);
        }
        DiscreteDistribution::new(samples.to_vec(), vec![1.0 / n as f64; n], support)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[DVector<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Wasserstein ball: center distribution plus radius.
#[derive(Debug, Clone)]
pub struct AmbiguitySet {
    pub center: DiscreteDistribution,
    pub radius: f64,
}

impl AmbiguitySet {
    pub fn new(center: DiscreteDistribution, radius: f64) -> Result<Self, RiskError> {
        if !(radius >= 0.0) {
            return Err(RiskError::InvalidDistribution(format!(
                "negative ambiguity radius {radius}"
            )));
        }
        Ok(AmbiguitySet { center, radius })
    }
}

/// Risk-averseness level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskParams {
    pub beta: f64,
}

impl RiskParams {
    pub fn new(beta: f64) -> Result<Self, RiskError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(RiskError::InvalidBeta(beta));
        }
        Ok(RiskParams { beta })
    }
}

/// Exact CVaR of a discrete random variable: the average of the worst
/// beta-mass of outcomes (the optimal threshold of the variational form is
/// the (1-beta)-quantile).
pub fn cvar_discrete(values: &[f64], weights: &[f64], beta: f64) -> Result<f64, RiskError> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(RiskError::Empty);
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(RiskError::InvalidBeta(beta));
    }
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < 0.0) {
        return Err(RiskError::InvalidDistribution(format!(
            "weights sum to {wsum}"
        )));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap_or(std::cmp::Ordering::Equal));
    let mut remaining = beta;
    let mut acc = 0.0;
    for &i in &idx {
        let take = remaining.min(weights[i]);
        acc += take * values[i];
        remaining -= take;
        if remaining <= 1e-15 {
            break;
        }
    }
    Ok(acc / beta)
}

/// 1-Wasserstein distance between discrete distributions (optimal
/// transport LP with Euclidean ground cost).
pub fn wasserstein_discrete(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
) -> Result<f64, RiskError> {
    let (nl, nr) = (mu.len(), nu.len());
    let mut b = ProgramBuilder::new();
    let plan = b.nonneg_vars(nl * nr);
    for i in 0..nl {
        for j in 0..nr {
            let cost = (&mu.atoms[i] - &nu.atoms[j]).norm();
            b.add_objective(plan + i * nr + j, cost);
        }
    }
    for i in 0..nl {
        let entries: Vec<(usize, f64)> = (0..nr).map(|j| (plan + i * nr + j, 1.0)).collect();
        b.add_row(&entries, mu.weights[i]);
    }
    // the final column constraint is redundant given row sums; keep all but
    // one to avoid an exactly singular equality system
    for j in 0..nr.saturating_sub(1) {
        let entries: Vec<(usize, f64)> = (0..nl).map(|i| (plan + i * nr + j, 1.0)).collect();
        b.add_row(&entries, nu.weights[j]);
    }
    let sol = conic::solve(&b.build(), 1e-9, 400)?;
    if sol.status != SolveStatus::Optimal {
        return Err(RiskError::Numerical(format!(
            "transport LP ended with {:?}",
            sol.status
        )));
    }
    Ok(sol.objective.max(0.0))
}
