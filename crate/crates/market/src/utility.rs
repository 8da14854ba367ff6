//! CES-family utility trees.
//!
//! A utility is a tree whose leaves act on resource quantities and whose
//! inner nodes aggregate child utilities with a CES form. Every tree built
//! from these parts is continuous, concave and homogeneous of degree one,
//! which is exactly the class the equilibrium solver requires.

use crate::scalar::Real;
use crate::scenario::ResourceId;
use std::collections::BTreeSet;
use thiserror::Error;

/// Utility function over a bundle `x` of resource quantities.
///
/// Leaf weights are strictly positive. For `Leontief` the weight is the
/// demand per unit of service (`d_k`), for the other leaves it is the value
/// weight (`v_k`). Cobb-Douglas exponents are normalized to sum to one at
/// evaluation time, so the function is always homogeneous of degree one.
#[derive(Debug, Clone, PartialEq)]
pub enum UtilitySpec<T> {
    /// `Σ v_k x_k` — perfect substitutes.
    Linear { weights: Vec<(ResourceId, T)> },
    /// `min_k x_k / d_k` — perfect complements.
    Leontief { demands: Vec<(ResourceId, T)> },
    /// `Π x_k^{v_k}` with `Σ v_k = 1`.
    CobbDouglas { weights: Vec<(ResourceId, T)> },
    /// `(Σ v_k x_k^ρ)^{1/ρ}` with `ρ ∈ (−∞,0) ∪ (0,1]`.
    Ces { rho: T, weights: Vec<(ResourceId, T)> },
    /// CES aggregation of child utilities; `rho = 1` is a plain weighted sum.
    Nest { rho: T, children: Vec<(T, UtilitySpec<T>)> },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GradientError {
    #[error("invalid point: non-finite coordinate")]
    InvalidPoint,
    #[error("supergradient unavailable: zero coordinate under a {0} form")]
    Unavailable(&'static str),
}

impl<T: Real> UtilitySpec<T> {
    /// A sum node with unit weights, `U = Σ U_child`.
    pub fn sum(children: Vec<UtilitySpec<T>>) -> Self {
        UtilitySpec::Nest {
            rho: T::one(),
            children: children.into_iter().map(|c| (T::one(), c)).collect(),
        }
    }

    /// All resources referenced anywhere in the tree.
    pub fn scoped_resources(&self) -> BTreeSet<ResourceId> {
        let mut out = BTreeSet::new();
        self.collect_resources(&mut out);
        out
    }

    fn collect_resources(&self, out: &mut BTreeSet<ResourceId>) {
        match self {
            UtilitySpec::Linear { weights }
            | UtilitySpec::CobbDouglas { weights }
            | UtilitySpec::Ces { weights, .. } => out.extend(weights.iter().map(|(r, _)| *r)),
            UtilitySpec::Leontief { demands } => out.extend(demands.iter().map(|(r, _)| *r)),
            UtilitySpec::Nest { children, .. } => {
                for (_, c) in children {
                    c.collect_resources(out);
                }
            }
        }
    }

    /// True if any leaf in the tree is Leontief.
    pub fn has_leontief(&self) -> bool {
        match self {
            UtilitySpec::Leontief { .. } => true,
            UtilitySpec::Nest { children, .. } => children.iter().any(|(_, c)| c.has_leontief()),
            _ => false,
        }
    }

    /// Leaf count, in depth-first order. Used to index epigraph variables.
    pub fn count_leontief_leaves(&self) -> usize {
        match self {
            UtilitySpec::Leontief { .. } => 1,
            UtilitySpec::Nest { children, .. } => {
                children.iter().map(|(_, c)| c.count_leontief_leaves()).sum()
            }
            _ => 0,
        }
    }
}

/// Evaluate a utility tree at a non-negative bundle.
///
/// Zero coordinates under Cobb-Douglas or negative-`ρ` CES forms yield value
/// zero by continuity; this is a defined value, not an error.
pub fn eval_utility<T: Real>(u: &UtilitySpec<T>, x: &[T]) -> T {
    match u {
        UtilitySpec::Linear { weights } => weights.iter().map(|&(r, v)| v * x[r.0]).sum(),
        UtilitySpec::Leontief { demands } => demands
            .iter()
            .map(|&(r, d)| x[r.0] / d)
            .fold(T::infinity(), T::min),
        UtilitySpec::CobbDouglas { weights } => {
            let total: T = weights.iter().map(|&(_, v)| v).sum();
            let mut acc = T::one();
            for &(r, v) in weights {
                acc = acc * x[r.0].powf(v / total);
            }
            acc
        }
        UtilitySpec::Ces { rho, weights } => {
            let s: T = weights.iter().map(|&(r, v)| v * x[r.0].powf(*rho)).sum();
            ces_close(s, *rho)
        }
        UtilitySpec::Nest { rho, children } => {
            if *rho == T::one() {
                children.iter().map(|(w, c)| *w * eval_utility(c, x)).sum()
            } else {
                let s: T = children
                    .iter()
                    .map(|(w, c)| *w * eval_utility(c, x).powf(*rho))
                    .sum();
                ces_close(s, *rho)
            }
        }
    }
}

// S^{1/rho} with the conventions 0^{1/rho} = 0 (rho > 0) and inf^{1/rho} = 0
// (rho < 0), so zero inputs propagate to a zero value instead of NaN.
fn ces_close<T: Real>(s: T, rho: T) -> T {
    if s.is_infinite() {
        if rho < T::zero() {
            T::zero()
        } else {
            T::infinity()
        }
    } else if s == T::zero() {
        T::zero()
    } else {
        s.powf(rho.recip())
    }
}

/// A supergradient of the tree at `x`, as a dense length-`K` vector.
///
/// Smooth forms return their gradient and require strictly positive scoped
/// coordinates (except Linear, and CES/Nest with `ρ = 1`). Leontief leaves
/// are valid everywhere; when several ratios tie for the minimum, the whole
/// weight `1/d_k` goes to the lowest-index binding resource.
pub fn utility_supergradient<T: Real>(
    u: &UtilitySpec<T>,
    x: &[T],
) -> Result<Vec<T>, GradientError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GradientError::InvalidPoint);
    }
    let mut grad = vec![T::zero(); x.len()];
    value_and_grad(u, x, T::one(), &mut grad)?;
    Ok(grad)
}

// Recursive evaluation that accumulates `scale * ∇(subtree)` into `grad`
// and returns the subtree value.
fn value_and_grad<T: Real>(
    u: &UtilitySpec<T>,
    x: &[T],
    scale: T,
    grad: &mut [T],
) -> Result<T, GradientError> {
    match u {
        UtilitySpec::Linear { weights } => {
            let mut val = T::zero();
            for &(r, v) in weights {
                val += v * x[r.0];
                grad[r.0] += scale * v;
            }
            Ok(val)
        }
        UtilitySpec::Leontief { demands } => {
            let mut best = T::infinity();
            let mut best_at = demands[0].0;
            let mut best_d = demands[0].1;
            for &(r, d) in demands {
                let ratio = x[r.0] / d;
                if ratio < best {
                    best = ratio;
                    best_at = r;
                    best_d = d;
                }
            }
            grad[best_at.0] += scale / best_d;
            Ok(best)
        }
        UtilitySpec::CobbDouglas { weights } => {
            let total: T = weights.iter().map(|&(_, v)| v).sum();
            let mut val = T::one();
            for &(r, v) in weights {
                if x[r.0] <= T::zero() {
                    return Err(GradientError::Unavailable("Cobb-Douglas"));
                }
                val = val * x[r.0].powf(v / total);
            }
            for &(r, v) in weights {
                grad[r.0] += scale * (v / total) * val / x[r.0];
            }
            Ok(val)
        }
        UtilitySpec::Ces { rho, weights } => {
            let rho = *rho;
            if rho == T::one() {
                let mut val = T::zero();
                for &(r, v) in weights {
                    val += v * x[r.0];
                    grad[r.0] += scale * v;
                }
                return Ok(val);
            }
            let mut s = T::zero();
            for &(r, v) in weights {
                if x[r.0] <= T::zero() {
                    return Err(GradientError::Unavailable("CES"));
                }
                s += v * x[r.0].powf(rho);
            }
            let val = s.powf(rho.recip());
            let outer = val.powf(T::one() - rho);
            for &(r, v) in weights {
                grad[r.0] += scale * outer * v * x[r.0].powf(rho - T::one());
            }
            Ok(val)
        }
        UtilitySpec::Nest { rho, children } => {
            let rho = *rho;
            if rho == T::one() {
                let mut val = T::zero();
                for (w, c) in children {
                    val += *w * value_and_grad(c, x, scale * *w, grad)?;
                }
                return Ok(val);
            }
            // two passes: child values first, then chain-scaled gradients
            let mut vals = Vec::with_capacity(children.len());
            for (_, c) in children {
                vals.push(eval_utility(c, x));
            }
            let mut s = T::zero();
            for ((w, _), v) in children.iter().zip(&vals) {
                if *v <= T::zero() {
                    return Err(GradientError::Unavailable("CES nest"));
                }
                s += *w * v.powf(rho);
            }
            let val = s.powf(rho.recip());
            let outer = val.powf(T::one() - rho);
            for ((w, c), v) in children.iter().zip(&vals) {
                let slope = outer * *w * v.powf(rho - T::one());
                value_and_grad(c, x, scale * slope, grad)?;
            }
            Ok(val)
        }
    }
}
