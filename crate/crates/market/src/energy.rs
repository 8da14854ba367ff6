//! Regulatory energy constraints on aggregate resource usage.
//!
//! Each constraint bounds `e_i(x̄) = Σ_{k∈S_i} x̄_k^{β_k}` by a limit `E_i`.
//! The power form with `β_k ≥ 1` keeps every `e_i` convex and non-decreasing,
//! which the equilibrium theory requires.

use crate::allocation::AggregateUsage;
use crate::scalar::Real;
use crate::scenario::ResourceId;

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyConstraint<T> {
    /// Human-readable handle, e.g. `"total"` or `"local"`.
    pub label: String,
    /// Scoped resources with their exponents `β_k ≥ 1`.
    pub terms: Vec<(ResourceId, T)>,
    /// Consumption limit `E_i > 0`.
    pub limit: T,
}

impl<T: Real> EnergyConstraint<T> {
    pub fn scope(&self) -> impl Iterator<Item = ResourceId> + '_ {
        self.terms.iter().map(|&(r, _)| r)
    }

    pub(crate) fn eval_raw(&self, xbar: &[T]) -> T {
        self.terms.iter().map(|&(r, beta)| xbar[r.0].powf(beta)).sum()
    }

    pub(crate) fn gradient_raw(&self, xbar: &[T], out: &mut [T]) {
        for v in out.iter_mut() {
            *v = T::zero();
        }
        for &(r, beta) in &self.terms {
            out[r.0] = beta * xbar[r.0].powf(beta - T::one());
        }
    }
}

/// Consumption `Σ_{k∈S_i} x̄_k^{β_k}` of one constraint.
pub fn eval_energy<T: Real>(c: &EnergyConstraint<T>, xbar: &AggregateUsage<T>) -> T {
    c.eval_raw(xbar.as_slice())
}

/// Gradient `∇_k e_i(x̄) = β_k x̄_k^{β_k−1}` on scoped resources, zero elsewhere.
pub fn energy_gradient<T: Real>(c: &EnergyConstraint<T>, xbar: &AggregateUsage<T>) -> Vec<T> {
    let mut out = vec![T::zero(); xbar.as_slice().len()];
    c.gradient_raw(xbar.as_slice(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn usage(v: Vec<f64>) -> AggregateUsage<f64> {
        AggregateUsage::from_values(v)
    }

    fn constraint(terms: Vec<(usize, f64)>, limit: f64) -> EnergyConstraint<f64> {
        EnergyConstraint {
            label: "test".into(),
            terms: terms.into_iter().map(|(k, b)| (ResourceId(k), b)).collect(),
            limit,
        }
    }

    #[test]
    fn quadratic_single_resource() {
        let c = constraint(vec![(0, 2.0)], 100.0);
        assert_eq!(eval_energy(&c, &usage(vec![3.0])), 9.0);
    }

    #[test]
    fn linear_sum_over_scope() {
        let c = constraint(vec![(0, 1.0), (1, 1.0)], 100.0);
        assert_eq!(eval_energy(&c, &usage(vec![3.0, 4.0])), 7.0);
    }

    #[test]
    fn cubic_single_resource() {
        let c = constraint(vec![(1, 3.0)], 100.0);
        assert_eq!(eval_energy(&c, &usage(vec![0.0, 2.0])), 8.0);
    }

    #[test]
    fn gradient_components() {
        let quad = constraint(vec![(0, 2.0)], 100.0);
        assert_eq!(energy_gradient(&quad, &usage(vec![3.0])), vec![6.0]);
        let lin = constraint(vec![(0, 1.0)], 100.0);
        assert_eq!(energy_gradient(&lin, &usage(vec![123.0])), vec![1.0]);
        // β=1 stays defined at zero usage
        assert_eq!(energy_gradient(&lin, &usage(vec![0.0])), vec![1.0]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let c = constraint(vec![(0, 3.0)], 100.0);
        let g = energy_gradient(&c, &usage(vec![2.0]));
        assert_relative_eq!(g[0], 12.0, max_relative = 1e-12);
        let h = 1e-6;
        let fd = (eval_energy(&c, &usage(vec![2.0 + h])) - eval_energy(&c, &usage(vec![2.0 - h])))
            / (2.0 * h);
        assert_relative_eq!(g[0], fd, epsilon = 1e-6);
    }
}
