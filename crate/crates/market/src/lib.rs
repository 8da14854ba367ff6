//! Market-equilibrium solver for capacity- and energy-constrained resource
//! allocation.
//!
//! Agents with fixed budgets of artificial currency compete for divisible
//! resources (Fisher market). Aggregate usage is subject to convex energy
//! limits alongside per-resource capacities. The equilibrium is computed by
//! maximizing budget-weighted log-utilities over the constrained set
//! (an Eisenberg-Gale program extended with the energy rows); capacity duals
//! become resource prices and energy duals become Pigouvian taxes, so each
//! price splits as `p_k = γ_k + Σ_i λ_i ∇_k e_i(x̄)`.
//!
//! The crate is generic over the floating-point scalar; `f64` is the type
//! every alias below uses and the one the test suites pin down.

pub mod allocation;
pub mod best_response;
pub mod energy;
pub mod pricing;
pub mod scalar;
pub mod scenario;
pub mod social;
pub mod solver;
pub mod utility;
pub mod verify;

#[cfg(feature = "testkit")]
pub mod testkit;

pub use allocation::{AggregateUsage, Allocation};
pub use best_response::{best_response, BestResponse, BestResponseError};
pub use energy::{energy_gradient, eval_energy, EnergyConstraint};
pub use pricing::{assemble_prices, check_clearing, ClearingReport, PriceDecomposition, PricingError};
pub use scalar::Real;
pub use scenario::{
    validate_scenario, Agent, Capacity, MarketScenario, Resource, ResourceId, ValidationReport,
};
pub use social::{solve_social_optimum, SocialError, SocialOptimumResult};
pub use solver::{
    build_problem, solve, BuildError, EgProblem, EquilibriumResult, SolveError, SolverConfig,
    SolverStats,
};
pub use utility::{eval_utility, utility_supergradient, GradientError, UtilitySpec};
pub use verify::{
    brute_force_optimum, certify, nash_welfare, proportional_fairness_check, CertificateReport,
    FairnessReport, VerifyError,
};

/// `f64` instantiations of the main types.
pub type Scenario64 = MarketScenario<f64>;
pub type Utility64 = UtilitySpec<f64>;
pub type Allocation64 = Allocation<f64>;
pub type Equilibrium64 = EquilibriumResult<f64>;
pub type SocialOptimum64 = SocialOptimumResult<f64>;
pub type Config64 = SolverConfig<f64>;
pub type Certificate64 = CertificateReport<f64>;
