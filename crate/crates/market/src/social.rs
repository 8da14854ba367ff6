//! Social-optimum baseline: maximize a weighted sum of utilities under the
//! same capacity and energy constraints, for comparison against the market
//! equilibrium. Reuses the barrier engine with a linear-in-utilities
//! objective on the same lifted feasible set.

use crate::allocation::Allocation;
use crate::scalar::Real;
use crate::scenario::MarketScenario;
use crate::solver::{
    build_with_objective, solve, BuildError, Objective, SolveError, SolverConfig, SolverStats,
};
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct SocialOptimumResult<T> {
    pub allocation: Allocation<T>,
    pub utilities: Vec<T>,
    /// `Σ_n w_n U_n` at the result.
    pub objective: T,
    pub capacity_duals: Vec<T>,
    pub energy_duals: Vec<T>,
    pub stats: SolverStats<T>,
}

#[derive(Debug, Error)]
pub enum SocialError<T: Real> {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Solve(SolveError<T>),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

/// Maximize `Σ_n w_n U_n` subject to the scenario's constraints.
///
/// Weights must be non-negative with at least one strictly positive; a
/// zero-weight agent keeps its feasibility footprint but contributes nothing
/// to the objective. With several optima (common for Leontief utilities, where
/// this is a linear program) the central-path limit is returned, so compare
/// utilities rather than raw allocations.
pub fn solve_social_optimum<T: Real>(
    s: &MarketScenario<T>,
    weights: &[T],
    cfg: &SolverConfig<T>,
) -> Result<SocialOptimumResult<T>, SocialError<T>> {
    if weights.len() != s.n_agents() {
        return Err(SocialError::InvalidWeights(format!(
            "{} weights for {} agents",
            weights.len(),
            s.n_agents()
        )));
    }
    if weights.iter().any(|w| *w < T::zero() || !w.is_finite()) {
        return Err(SocialError::InvalidWeights(
            "weights must be non-negative and finite".into(),
        ));
    }
    if !weights.iter().any(|w| *w > T::zero()) {
        return Err(SocialError::InvalidWeights(
            "at least one weight must be positive".into(),
        ));
    }

    let problem = build_with_objective(s, Objective::WeightedSum(weights.to_vec()))?;
    let r = solve(&problem, cfg).map_err(SocialError::Solve)?;
    Ok(SocialOptimumResult {
        allocation: r.allocation,
        utilities: r.utilities,
        objective: r.objective,
        capacity_duals: r.capacity_duals,
        energy_duals: r.energy_duals,
        stats: r.stats,
    })
}
