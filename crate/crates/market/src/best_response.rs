//! Single-agent demand at given prices: maximize utility over the budget set.
//!
//! Degree-one homogeneity makes a clean two-stage argument work whenever the
//! leaves of the utility tree touch disjoint resource sets: every subtree has
//! a well-defined optimal "utility per unit of spending" φ, leaves have
//! closed-form φ and per-budget demand, and a CES nest splits spending across
//! children in closed form from the children's φ values. Trees with
//! overlapping leaf scopes fall back to projected-gradient ascent on the
//! simplex of spending shares.

use crate::scalar::Real;
use crate::scenario::Agent;
use crate::utility::{eval_utility, utility_supergradient, UtilitySpec};
use std::collections::BTreeSet;
use thiserror::Error;

/// Demand cap for resources the agent values but that carry zero price.
/// Keeps the oracle total for off-equilibrium diagnostics.
const ZERO_PRICE_CAP: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BestResponseError {
    #[error("degenerate prices: every valued resource has zero price")]
    DegeneratePrices,
    #[error("unbounded: resource {0} is valued, free, and raises utility without limit")]
    Unbounded(String),
}

#[derive(Debug, Clone)]
pub struct BestResponse<T> {
    pub demand: Vec<T>,
    pub utility: T,
    pub spending: T,
    /// Set when some zero-priced resource was clamped to the demand cap.
    pub capped: bool,
}

/// Maximize the agent's utility subject to `Σ p_k x_k ≤ B`, to relative
/// accuracy `tol` (closed forms are exact; only the overlapping-scope
/// fallback iterates).
pub fn best_response<T: Real>(
    agent: &Agent<T>,
    prices: &[T],
    tol: T,
) -> Result<BestResponse<T>, BestResponseError> {
    let valued = agent.utility.scoped_resources();
    if valued.iter().all(|r| prices[r.0] <= T::zero()) {
        return Err(BestResponseError::DegeneratePrices);
    }

    let demand = if leaf_scopes_disjoint(&agent.utility) {
        let plan = unit_plan(&agent.utility, prices)?;
        let mut demand = vec![T::zero(); prices.len()];
        for &(k, per_budget) in &plan.demand {
            demand[k] += per_budget * agent.budget;
        }
        let mut capped = false;
        for &(k, amount) in &plan.fixed {
            demand[k] = demand[k].max(amount);
            capped = true;
        }
        return Ok(finish(agent, prices, demand, capped));
    } else {
        share_ascent(agent, prices, tol)?
    };
    Ok(demand)
}

fn finish<T: Real>(agent: &Agent<T>, prices: &[T], demand: Vec<T>, capped: bool) -> BestResponse<T> {
    let spending = prices.iter().zip(&demand).map(|(&p, &x)| p * x).sum();
    let utility = eval_utility(&agent.utility, &demand);
    BestResponse { demand, utility, spending, capped }
}

fn leaf_scopes_disjoint<T: Real>(u: &UtilitySpec<T>) -> bool {
    fn walk<T: Real>(u: &UtilitySpec<T>, seen: &mut BTreeSet<usize>) -> bool {
        match u {
            UtilitySpec::Nest { children, .. } => {
                children.iter().all(|(_, c)| walk(c, seen))
            }
            _ => u.scoped_resources().iter().all(|r| seen.insert(r.0)),
        }
    }
    walk(u, &mut BTreeSet::new())
}

// Optimal behavior of one subtree per unit of budget.
struct UnitPlan<T> {
    /// Utility per unit of spending.
    phi: T,
    /// (resource, quantity per unit budget) for priced purchases.
    demand: Vec<(usize, T)>,
    /// Zero-priced resources pinned at the cap, independent of budget.
    fixed: Vec<(usize, T)>,
}

fn unit_plan<T: Real>(u: &UtilitySpec<T>, prices: &[T]) -> Result<UnitPlan<T>, BestResponseError> {
    let cap = T::of(ZERO_PRICE_CAP);
    match u {
        UtilitySpec::Linear { weights } => {
            // all budget on the best value-per-price resource, lowest index on ties
            if let Some(&(r, _)) = weights.iter().find(|&&(r, _)| prices[r.0] <= T::zero()) {
                return Err(BestResponseError::Unbounded(format!("#{}", r.0)));
            }
            let mut best = (weights[0].0 .0, weights[0].1 / prices[weights[0].0 .0]);
            for &(r, v) in &weights[1..] {
                let ratio = v / prices[r.0];
                if ratio > best.1 {
                    best = (r.0, ratio);
                }
            }
            Ok(UnitPlan {
                phi: best.1,
                demand: vec![(best.0, prices[best.0].recip())],
                fixed: vec![],
            })
        }
        UtilitySpec::Leontief { demands } => {
            // fixed proportions: x_k = d_k · B / Σ_j p_j d_j
            let bundle_price: T = demands.iter().map(|&(r, d)| prices[r.0] * d).sum();
            if bundle_price <= T::zero() {
                // the whole bundle is free; pin at the cap
                let dmax = demands.iter().map(|&(_, d)| d).fold(T::zero(), T::max);
                return Ok(UnitPlan {
                    phi: cap / dmax,
                    demand: vec![],
                    fixed: demands.iter().map(|&(r, d)| (r.0, cap * d / dmax)).collect(),
                });
            }
            Ok(UnitPlan {
                phi: bundle_price.recip(),
                demand: demands
                    .iter()
                    .map(|&(r, d)| (r.0, d / bundle_price))
                    .collect(),
                fixed: vec![],
            })
        }
        UtilitySpec::CobbDouglas { weights } => {
            if let Some(&(r, _)) = weights.iter().find(|&&(r, _)| prices[r.0] <= T::zero()) {
                return Err(BestResponseError::Unbounded(format!("#{}", r.0)));
            }
            let total: T = weights.iter().map(|&(_, w)| w).sum();
            let mut phi = T::one();
            let mut demand = Vec::with_capacity(weights.len());
            for &(r, w) in weights {
                let a = w / total;
                phi = phi * (a / prices[r.0]).powf(a);
                demand.push((r.0, a / prices[r.0]));
            }
            Ok(UnitPlan { phi, demand, fixed: vec![] })
        }
        UtilitySpec::Ces { rho, weights } => {
            let rho = *rho;
            if rho == T::one() {
                return unit_plan(&UtilitySpec::Linear { weights: weights.clone() }, prices);
            }
            let mut fixed = Vec::new();
            let mut priced = Vec::new();
            for &(r, v) in weights {
                if prices[r.0] <= T::zero() {
                    if rho > T::zero() {
                        return Err(BestResponseError::Unbounded(format!("#{}", r.0)));
                    }
                    // ρ < 0: a free resource saturates; cap it and drop its term
                    fixed.push((r.0, cap));
                } else {
                    priced.push((r.0, v));
                }
            }
            if priced.is_empty() {
                return Ok(UnitPlan { phi: cap, demand: vec![], fixed });
            }
            // spend shares σ_k ∝ (v_k p_k^{-ρ})^{1/(1-ρ)}
            let exp = (T::one() - rho).recip();
            let mut shares: Vec<T> = priced
                .iter()
                .map(|&(k, v)| (v * prices[k].powf(-rho)).powf(exp))
                .collect();
            let total: T = shares.iter().copied().sum();
            for s in shares.iter_mut() {
                *s /= total;
            }
            let mut s_pow: T = T::zero();
            let mut demand = Vec::with_capacity(priced.len());
            for (&(k, v), &sig) in priced.iter().zip(&shares) {
                let x = sig / prices[k];
                demand.push((k, x));
                s_pow += v * x.powf(rho);
            }
            Ok(UnitPlan { phi: s_pow.powf(rho.recip()), demand, fixed })
        }
        UtilitySpec::Nest { rho, children } => {
            let plans: Vec<UnitPlan<T>> = children
                .iter()
                .map(|(_, c)| unit_plan(c, prices))
                .collect::<Result<_, _>>()?;
            let rho = *rho;
            let mut fixed = Vec::new();
            for p in &plans {
                fixed.extend(p.fixed.iter().copied());
            }
            if rho == T::one() {
                // value per unit spend is linear in the split: corner optimum
                let mut best = 0usize;
                for (j, ((w, _), p)) in children.iter().zip(&plans).enumerate() {
                    if *w * p.phi > children[best].0 * plans[best].phi {
                        best = j;
                    }
                }
                let phi = children[best].0 * plans[best].phi;
                return Ok(UnitPlan { phi, demand: plans[best].demand.clone(), fixed });
            }
            // σ_j ∝ (w_j φ_j^ρ)^{1/(1-ρ)}
            let exp = (T::one() - rho).recip();
            let mut shares: Vec<T> = children
                .iter()
                .zip(&plans)
                .map(|((w, _), p)| (*w * p.phi.powf(rho)).powf(exp))
                .collect();
            let total: T = shares.iter().copied().sum();
            for s in shares.iter_mut() {
                *s /= total;
            }
            let mut s_pow = T::zero();
            let mut demand = Vec::new();
            for (((w, _), p), &sig) in children.iter().zip(&plans).zip(&shares) {
                s_pow += *w * (p.phi * sig).powf(rho);
                for &(k, d) in &p.demand {
                    demand.push((k, d * sig));
                }
            }
            Ok(UnitPlan { phi: s_pow.powf(rho.recip()), demand, fixed })
        }
    }
}

// Fallback for trees whose leaves share resources: ascend U(x(y)) over the
// simplex of spending shares y, x_k = B y_k / p_k.
fn share_ascent<T: Real>(
    agent: &Agent<T>,
    prices: &[T],
    tol: T,
) -> Result<BestResponse<T>, BestResponseError> {
    let valued: Vec<usize> = agent.utility.scoped_resources().iter().map(|r| r.0).collect();
    let cap = T::of(ZERO_PRICE_CAP);
    let mut fixed = Vec::new();
    let priced: Vec<usize> = valued
        .iter()
        .copied()
        .filter(|&k| {
            if prices[k] > T::zero() {
                true
            } else {
                fixed.push(k);
                false
            }
        })
        .collect();
    if priced.is_empty() {
        return Err(BestResponseError::DegeneratePrices);
    }
    let capped = !fixed.is_empty();

    let m = priced.len();
    let uniform = T::from_usize(m).unwrap().recip();
    let mut y = vec![uniform; m];
    let assemble = |y: &[T]| -> Vec<T> {
        let mut x = vec![T::zero(); prices.len()];
        for (&k, &yk) in priced.iter().zip(y) {
            x[k] = agent.budget * yk / prices[k];
        }
        for &k in &fixed {
            x[k] = cap;
        }
        x
    };

    let mut best_val = eval_utility(&agent.utility, &assemble(&y));
    let floor = T::of(1e-12);
    for _ in 0..20_000 {
        let x = assemble(&y);
        let Ok(g) = utility_supergradient(&agent.utility, &x) else {
            break;
        };
        // chain rule through x_k = B y_k / p_k
        let gy: Vec<T> = priced
            .iter()
            .map(|&k| g[k] * agent.budget / prices[k])
            .collect();
        let gnorm = gy.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
        if gnorm == T::zero() {
            break;
        }
        let mut improved = false;
        let mut step = T::one() / gnorm;
        for _ in 0..40 {
            let mut cand: Vec<T> = y.iter().zip(&gy).map(|(&a, &b)| a + step * b).collect();
            project_simplex(&mut cand);
            for c in cand.iter_mut() {
                *c = c.max(floor);
            }
            let total: T = cand.iter().copied().sum();
            for c in cand.iter_mut() {
                *c /= total;
            }
            let val = eval_utility(&agent.utility, &assemble(&cand));
            if val > best_val {
                let rel_gain = (val - best_val) / best_val.max(T::one());
                y = cand;
                best_val = val;
                improved = true;
                if rel_gain < tol * T::of(1e-3) {
                    return Ok(finish(agent, prices, assemble(&y), capped));
                }
                break;
            }
            step = step * T::of(0.5);
        }
        if !improved {
            break;
        }
    }
    Ok(finish(agent, prices, assemble(&y), capped))
}

// Euclidean projection onto the probability simplex.
fn project_simplex<T: Real>(y: &mut [T]) {
    let n = y.len();
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = T::zero();
    let mut theta = T::zero();
    for (i, &v) in sorted.iter().enumerate() {
        cum += v;
        let idx = T::from_usize(i + 1).unwrap();
        let t = (cum - T::one()) / idx;
        if i + 1 == n || sorted[i + 1] <= t {
            theta = t;
            break;
        }
    }
    for v in y.iter_mut() {
        *v = (*v - theta).max(T::zero());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ResourceId;
    use approx::assert_relative_eq;

    fn rid(i: usize) -> ResourceId {
        ResourceId(i)
    }

    fn agent(utility: UtilitySpec<f64>, budget: f64) -> Agent<f64> {
        Agent { name: "n".into(), budget, utility }
    }

    #[test]
    fn leontief_demand_closed_form() {
        let a = agent(
            UtilitySpec::Leontief {
                demands: vec![(rid(0), 2.0), (rid(1), 8.0), (rid(2), 10.0)],
            },
            6.0,
        );
        let br = best_response(&a, &[1.0, 0.25, 0.2], 1e-9).unwrap();
        assert_relative_eq!(br.demand[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(br.demand[1], 8.0, max_relative = 1e-12);
        assert_relative_eq!(br.demand[2], 10.0, max_relative = 1e-12);
        assert_relative_eq!(br.utility, 1.0, max_relative = 1e-12);
        assert_relative_eq!(br.spending, 6.0, max_relative = 1e-12);
        assert!(!br.capped);
    }

    #[test]
    fn linear_demand_picks_best_ratio() {
        let a = agent(
            UtilitySpec::Linear { weights: vec![(rid(0), 1.0), (rid(1), 2.0)] },
            3.0,
        );
        let br = best_response(&a, &[1.0, 1.0], 1e-9).unwrap();
        assert_eq!(br.demand, vec![0.0, 3.0]);
        assert_relative_eq!(br.utility, 6.0, max_relative = 1e-12);
    }

    #[test]
    fn linear_tie_breaks_to_lowest_index() {
        let a = agent(
            UtilitySpec::Linear { weights: vec![(rid(0), 2.0), (rid(1), 2.0)] },
            1.0,
        );
        let br = best_response(&a, &[1.0, 1.0], 1e-9).unwrap();
        assert!(br.demand[0] > 0.0 && br.demand[1] == 0.0);
    }

    #[test]
    fn cobb_douglas_demand_closed_form() {
        let a = agent(
            UtilitySpec::CobbDouglas { weights: vec![(rid(0), 0.75), (rid(1), 0.25)] },
            1.0,
        );
        let br = best_response(&a, &[1.0, 1.0], 1e-9).unwrap();
        assert_relative_eq!(br.demand[0], 0.75, max_relative = 1e-12);
        assert_relative_eq!(br.demand[1], 0.25, max_relative = 1e-12);
    }

    #[test]
    fn cobb_douglas_matches_grid_oracle() {
        let a = agent(
            UtilitySpec::CobbDouglas { weights: vec![(rid(0), 0.6), (rid(1), 0.4)] },
            2.0,
        );
        let prices = [0.5, 2.0];
        let br = best_response(&a, &prices, 1e-9).unwrap();
        // exhaustive spending-split search at step 1e-4
        let mut best = 0.0f64;
        for i in 0..=10_000 {
            let s0 = 2.0 * i as f64 / 10_000.0;
            let x = [s0 / prices[0], (2.0 - s0) / prices[1]];
            best = best.max(eval_utility(&a.utility, &x));
        }
        assert!(br.utility >= best - 1e-6);
        assert_relative_eq!(br.spending, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn sum_of_leontief_sites_spends_on_cheaper_site() {
        let u = UtilitySpec::sum(vec![
            UtilitySpec::Leontief { demands: vec![(rid(0), 1.0)] },
            UtilitySpec::Leontief { demands: vec![(rid(1), 1.0)] },
        ]);
        let a = agent(u, 1.0);
        let br = best_response(&a, &[0.5, 0.4], 1e-9).unwrap();
        assert_eq!(br.demand[0], 0.0);
        assert_relative_eq!(br.demand[1], 2.5, max_relative = 1e-12);
    }

    #[test]
    fn ces_nest_split_matches_grid_oracle() {
        let u = UtilitySpec::Nest {
            rho: 0.5,
            children: vec![
                (1.0, UtilitySpec::Leontief { demands: vec![(rid(0), 2.0)] }),
                (2.0, UtilitySpec::Linear { weights: vec![(rid(1), 1.5)] }),
            ],
        };
        let a = agent(u.clone(), 3.0);
        let prices = [1.0, 0.75];
        let br = best_response(&a, &prices, 1e-9).unwrap();
        let mut best = 0.0f64;
        for i in 0..=30_000 {
            let s0 = 3.0 * i as f64 / 30_000.0;
            let x = [s0 / prices[0], (3.0 - s0) / prices[1]];
            best = best.max(eval_utility(&u, &x));
        }
        assert!(br.utility >= best - 1e-5, "{} vs {}", br.utility, best);
    }

    #[test]
    fn degenerate_prices_error() {
        let a = agent(UtilitySpec::Linear { weights: vec![(rid(0), 1.0)] }, 1.0);
        assert!(matches!(
            best_response(&a, &[0.0], 1e-9),
            Err(BestResponseError::DegeneratePrices)
        ));
    }

    #[test]
    fn free_resource_under_linear_is_unbounded() {
        let a = agent(
            UtilitySpec::Linear { weights: vec![(rid(0), 1.0), (rid(1), 1.0)] },
            1.0,
        );
        assert!(matches!(
            best_response(&a, &[0.0, 1.0], 1e-9),
            Err(BestResponseError::Unbounded(_))
        ));
    }

    #[test]
    fn free_resource_under_leontief_is_fine() {
        let a = agent(
            UtilitySpec::Leontief { demands: vec![(rid(0), 1.0), (rid(1), 4.0)] },
            2.0,
        );
        let br = best_response(&a, &[1.0, 0.0], 1e-9).unwrap();
        assert_relative_eq!(br.demand[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(br.demand[1], 8.0, max_relative = 1e-12);
        assert!(!br.capped);
    }

    #[test]
    fn overlapping_scopes_use_share_ascent() {
        // two Cobb-Douglas leaves sharing resource 0: no closed form
        let u = UtilitySpec::sum(vec![
            UtilitySpec::CobbDouglas { weights: vec![(rid(0), 0.5), (rid(1), 0.5)] },
            UtilitySpec::CobbDouglas { weights: vec![(rid(0), 0.5), (rid(2), 0.5)] },
        ]);
        let a = agent(u.clone(), 1.0);
        let prices = [1.0, 1.0, 1.0];
        let br = best_response(&a, &prices, 1e-8).unwrap();
        let mut best = 0.0f64;
        let steps = 120;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let y = [
                    i as f64 / steps as f64,
                    j as f64 / steps as f64,
                    (steps - i - j) as f64 / steps as f64,
                ];
                best = best.max(eval_utility(&u, &y));
            }
        }
        assert!(br.utility >= best - 1e-3, "{} vs {}", br.utility, best);
        assert!(br.spending <= 1.0 + 1e-9);
    }

    #[test]
    fn demand_homogeneous_degree_zero_in_prices_and_budget() {
        let a = agent(
            UtilitySpec::CobbDouglas { weights: vec![(rid(0), 0.3), (rid(1), 0.7)] },
            2.0,
        );
        let br1 = best_response(&a, &[1.0, 3.0], 1e-9).unwrap();
        let mut scaled = a.clone();
        scaled.budget *= 5.0;
        let br2 = best_response(&scaled, &[5.0, 15.0], 1e-9).unwrap();
        for k in 0..2 {
            assert_relative_eq!(br1.demand[k], br2.demand[k], max_relative = 1e-12);
        }
    }
}
