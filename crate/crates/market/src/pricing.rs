//! Price assembly and market-clearing checks.
//!
//! Equilibrium prices are assembled from the dual variables, never fitted:
//! `p_k = γ_k + Σ_i λ_ik` holds by construction, with the Pigouvian tax
//! components `λ_ik = λ_i ∇_k e_i(x̄)`. A resource outside a constraint's
//! scope has zero gradient and therefore carries no tax from it.

use crate::allocation::Allocation;
use crate::energy::energy_gradient;
use crate::scalar::Real;
use crate::scenario::MarketScenario;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PricingError {
    #[error("negative dual: {0}")]
    NegativeDual(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Per-resource split of the price into its capacity and tax parts, plus
/// per-agent spending under the assembled prices.
#[derive(Debug, Clone)]
pub struct PriceDecomposition<T> {
    /// Total price per resource.
    pub prices: Vec<T>,
    /// Capacity component `γ_k`.
    pub capacity_part: Vec<T>,
    /// Tax components `λ_ik`, one row per energy constraint.
    pub tax_parts: Vec<Vec<T>>,
    /// `s_n = Σ_k p_k x_nk`.
    pub spending: Vec<T>,
}

/// Assemble the decomposition at an allocation from capacity and energy duals.
pub fn assemble_prices<T: Real>(
    s: &MarketScenario<T>,
    x: &Allocation<T>,
    gamma: &[T],
    lambda: &[T],
) -> Result<PriceDecomposition<T>, PricingError> {
    let n_res = s.n_resources();
    if gamma.len() != n_res {
        return Err(PricingError::DimensionMismatch(format!(
            "gamma has {} entries for {} resources",
            gamma.len(),
            n_res
        )));
    }
    if lambda.len() != s.energy_constraints.len() {
        return Err(PricingError::DimensionMismatch(format!(
            "lambda has {} entries for {} energy constraints",
            lambda.len(),
            s.energy_constraints.len()
        )));
    }
    if let Some(k) = gamma.iter().position(|&g| g < T::zero()) {
        return Err(PricingError::NegativeDual(format!("gamma[{k}]")));
    }
    if let Some(i) = lambda.iter().position(|&l| l < T::zero()) {
        return Err(PricingError::NegativeDual(format!("lambda[{i}]")));
    }

    let xbar = x.aggregate();
    let tax_parts: Vec<Vec<T>> = s
        .energy_constraints
        .iter()
        .zip(lambda)
        .map(|(c, &li)| {
            energy_gradient(c, &xbar)
                .into_iter()
                .map(|g| li * g)
                .collect()
        })
        .collect();
    let prices: Vec<T> = (0..n_res)
        .map(|k| gamma[k] + tax_parts.iter().map(|row| row[k]).sum::<T>())
        .collect();
    let spending: Vec<T> = (0..x.n_agents())
        .map(|n| prices.iter().enumerate().map(|(k, &p)| p * x.get(n, k)).sum())
        .collect();

    Ok(PriceDecomposition {
        prices,
        capacity_part: gamma.to_vec(),
        tax_parts,
        spending,
    })
}

/// One complementary-slackness line of a [`ClearingReport`].
#[derive(Debug, Clone)]
pub struct ClearingLine<T> {
    pub constraint: String,
    pub slack: T,
    pub dual: T,
    /// `dual · slack`, which complementary slackness requires to vanish.
    pub product: T,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ClearingReport<T> {
    pub capacity: Vec<ClearingLine<T>>,
    pub energy: Vec<ClearingLine<T>>,
    pub pass: bool,
}

/// Check C2-style clearing: every bound is either met with a non-negative
/// price or slack with a zero price, at scaled tolerance `tol`.
pub fn check_clearing<T: Real>(
    s: &MarketScenario<T>,
    x: &Allocation<T>,
    gamma: &[T],
    lambda: &[T],
    tol: T,
) -> ClearingReport<T> {
    let xbar = x.aggregate();
    let mut scale = T::one();
    for a in &s.agents {
        scale = scale.max(a.budget.abs());
    }
    for c in &s.energy_constraints {
        scale = scale.max(c.limit);
    }
    for r in &s.resources {
        if let Some(c) = r.capacity.bound() {
            scale = scale.max(c);
        }
    }

    let mut capacity = Vec::new();
    for (k, r) in s.resources.iter().enumerate() {
        if let Some(cap) = r.capacity.bound() {
            let slack = cap - xbar.get(k);
            let dual = gamma[k];
            let product = dual * slack;
            capacity.push(ClearingLine {
                constraint: format!("capacity[{}]", r.name),
                slack,
                dual,
                product,
                pass: dual >= -tol && slack >= -tol * scale && product.abs() <= tol * scale,
            });
        }
    }
    let mut energy = Vec::new();
    for (i, c) in s.energy_constraints.iter().enumerate() {
        let slack = c.limit - crate::energy::eval_energy(c, &xbar);
        let dual = lambda[i];
        let product = dual * slack;
        energy.push(ClearingLine {
            constraint: format!("energy[{}]", c.label),
            slack,
            dual,
            product,
            pass: dual >= -tol && slack >= -tol * scale && product.abs() <= tol * scale,
        });
    }
    let pass = capacity.iter().chain(energy.iter()).all(|l| l.pass);
    ClearingReport { capacity, energy, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::EnergyConstraint;
    use crate::scenario::{Agent, Capacity, Resource, ResourceId};
    use crate::utility::UtilitySpec;
    use approx::assert_relative_eq;

    fn one_resource_scenario() -> MarketScenario<f64> {
        MarketScenario {
            agents: vec![Agent {
                name: "a".into(),
                budget: 1.0,
                utility: UtilitySpec::Linear { weights: vec![(ResourceId(0), 1.0)] },
            }],
            resources: vec![Resource { name: "r".into(), capacity: Capacity::Bounded(10.0) }],
            energy_constraints: vec![EnergyConstraint {
                label: "e".into(),
                terms: vec![(ResourceId(0), 2.0)],
                limit: 100.0,
            }],
        }
    }

    #[test]
    fn tax_component_uses_energy_gradient() {
        let s = one_resource_scenario();
        let x = Allocation::from_rows(vec![vec![2.0]]);
        let d = assemble_prices(&s, &x, &[0.3], &[0.1]).unwrap();
        // λ_00 = 0.1 · (2 · 2) = 0.4, p = γ + λ_00 = 0.7
        assert_relative_eq!(d.tax_parts[0][0], 0.4, max_relative = 1e-15);
        assert_relative_eq!(d.prices[0], 0.7, max_relative = 1e-15);
        assert_relative_eq!(d.spending[0], 1.4, max_relative = 1e-15);
    }

    #[test]
    fn zero_lambda_gives_pure_capacity_prices() {
        let s = one_resource_scenario();
        let x = Allocation::from_rows(vec![vec![2.0]]);
        let d = assemble_prices(&s, &x, &[0.3], &[0.0]).unwrap();
        assert_eq!(d.prices, vec![0.3]);
    }

    #[test]
    fn zero_gamma_gives_pure_tax_prices() {
        let mut s = one_resource_scenario();
        s.resources[0].capacity = Capacity::Unbounded;
        s.energy_constraints[0].terms = vec![(ResourceId(0), 1.0)];
        let x = Allocation::from_rows(vec![vec![2.0]]);
        let d = assemble_prices(&s, &x, &[0.0], &[0.5]).unwrap();
        assert_eq!(d.prices, vec![0.5]);
        assert_eq!(d.capacity_part, vec![0.0]);
    }

    #[test]
    fn decomposition_identity_is_exact() {
        let s = one_resource_scenario();
        let x = Allocation::from_rows(vec![vec![1.7]]);
        let d = assemble_prices(&s, &x, &[0.25], &[0.125]).unwrap();
        let rebuilt = d.capacity_part[0] + d.tax_parts[0][0];
        assert_eq!(d.prices[0], rebuilt);
    }

    #[test]
    fn negative_dual_is_rejected() {
        let s = one_resource_scenario();
        let x = Allocation::from_rows(vec![vec![1.0]]);
        assert!(matches!(
            assemble_prices(&s, &x, &[-0.1], &[0.0]),
            Err(PricingError::NegativeDual(_))
        ));
    }

    #[test]
    fn clearing_lines() {
        let s = one_resource_scenario();
        // binding capacity with positive price passes
        let x = Allocation::from_rows(vec![vec![10.0]]);
        let rep = check_clearing(&s, &x, &[0.5], &[0.0], 1e-6);
        assert!(rep.capacity[0].pass);
        // slack with zero price passes
        let x = Allocation::from_rows(vec![vec![5.0]]);
        let rep = check_clearing(&s, &x, &[0.0], &[0.0], 1e-6);
        assert!(rep.pass);
        // slack 5 with price 0.2 fails, product 1.0
        let rep = check_clearing(&s, &x, &[0.2], &[0.0], 1e-6);
        assert!(!rep.capacity[0].pass);
        assert_relative_eq!(rep.capacity[0].product, 1.0, max_relative = 1e-15);
    }
}
