//! Equilibrium computation via the lifted convex program.

mod barrier;
pub(crate) mod linalg;
mod problem;

pub use barrier::SolverConfig;
pub use problem::{build_problem, build_with_objective, BuildError, EgProblem, Objective};

pub(crate) use barrier::{minimize, problem_scale, BarrierOutcome, BarrierStatus};

use crate::allocation::Allocation;
use crate::pricing::assemble_prices;
use crate::scalar::Real;
use crate::utility::eval_utility;
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct SolverStats<T> {
    pub outer_iterations: usize,
    pub newton_steps: usize,
    pub final_mu: T,
    /// Scaled max-norm residual of the stationarity fit.
    pub stationarity_residual: T,
    /// Scaled max complementary-slackness product over all constraints.
    pub complementarity_residual: T,
    /// Max relative budget-clearing gap across agents (zero for the
    /// social-optimum objective, which has no budgets).
    pub budget_residual: T,
    /// True objective after each outer stage; non-decreasing.
    pub objective_path: Vec<T>,
}

/// Market equilibrium: the allocation, its supporting prices, and the duals
/// the prices decompose into.
#[derive(Debug, Clone)]
pub struct EquilibriumResult<T> {
    pub allocation: Allocation<T>,
    /// Price per unit of each resource, `p_k = γ_k + Σ_i λ_i ∇_k e_i(x̄)`.
    pub prices: Vec<T>,
    pub capacity_duals: Vec<T>,
    pub energy_duals: Vec<T>,
    pub utilities: Vec<T>,
    /// Value of `Σ_n B_n log U_n` at the allocation.
    pub objective: T,
    pub stats: SolverStats<T>,
}

#[derive(Debug, Error)]
pub enum SolveError<T: Real> {
    #[error("max iterations: residual {residual} above tolerance")]
    MaxIterations {
        result: Box<EquilibriumResult<T>>,
        residual: T,
    },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

/// Solve the equilibrium program to the configured KKT tolerance.
pub fn solve<T: Real>(
    problem: &EgProblem<T>,
    cfg: &SolverConfig<T>,
) -> Result<EquilibriumResult<T>, SolveError<T>> {
    let (outcome, out_of_iterations) = match minimize(problem, cfg) {
        BarrierStatus::Converged(o) => (o, false),
        BarrierStatus::OutOfIterations(o) => (o, true),
        BarrierStatus::Failed(msg) => return Err(SolveError::NumericalFailure(msg)),
    };
    let result = assemble_result(problem, &outcome);
    let residual = result
        .stats
        .stationarity_residual
        .max(result.stats.complementarity_residual)
        .max(result.stats.budget_residual);
    if out_of_iterations || residual > cfg.kkt_tolerance {
        return Err(SolveError::MaxIterations {
            result: Box::new(result),
            residual,
        });
    }
    Ok(result)
}

pub(crate) fn assemble_result<T: Real>(
    problem: &EgProblem<T>,
    outcome: &BarrierOutcome<T>,
) -> EquilibriumResult<T> {
    let s = &problem.scenario;
    let n_agents = s.n_agents();
    let n_res = s.n_resources();

    let mut allocation = Allocation::zeros(n_agents, n_res);
    for n in 0..n_agents {
        for k in 0..n_res {
            if let Some(v) = problem.x_index[n * n_res + k] {
                allocation.set(n, k, outcome.z[v]);
            }
        }
    }
    let utilities: Vec<T> = s
        .agents
        .iter()
        .enumerate()
        .map(|(n, a)| eval_utility(&a.utility, allocation.agent_bundle(n)))
        .collect();
    let objective: T = match &problem.objective {
        Objective::BudgetLog(b) => utilities.iter().zip(b).map(|(&u, &bn)| bn * u.ln()).sum(),
        Objective::WeightedSum(w) => utilities.iter().zip(w).map(|(&u, &wn)| wn * u).sum(),
    };

    let decomposition =
        assemble_prices(s, &allocation, &outcome.gamma, &outcome.lambda).expect("duals are non-negative");
    let prices = decomposition.prices.clone();

    let scale = problem_scale(problem);
    let xbar = allocation.aggregate();
    let mut comp = T::zero();
    for (k, r) in s.resources.iter().enumerate() {
        if let Some(cap) = r.capacity.bound() {
            comp = comp.max((outcome.gamma[k] * (cap - xbar.get(k))).abs());
        }
    }
    for (i, c) in s.energy_constraints.iter().enumerate() {
        comp = comp.max((outcome.lambda[i] * (c.limit - crate::energy::eval_energy(c, &xbar))).abs());
    }

    let budget_residual = match &problem.objective {
        Objective::BudgetLog(budgets) => budgets
            .iter()
            .enumerate()
            .map(|(n, &b)| {
                let spent: T = prices
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| p * allocation.get(n, k))
                    .sum();
                (spent - b).abs() / T::one().max(b)
            })
            .fold(T::zero(), T::max),
        Objective::WeightedSum(_) => T::zero(),
    };

    EquilibriumResult {
        allocation,
        prices,
        capacity_duals: outcome.gamma.clone(),
        energy_duals: outcome.lambda.clone(),
        utilities,
        objective,
        stats: SolverStats {
            outer_iterations: outcome.outer_iterations,
            newton_steps: outcome.newton_steps,
            final_mu: outcome.final_mu,
            stationarity_residual: outcome.fit_residual / scale,
            complementarity_residual: comp / scale,
            budget_residual,
            objective_path: outcome.objective_path.clone(),
        },
    }
}
