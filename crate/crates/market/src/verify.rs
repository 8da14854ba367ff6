//! Equilibrium certificates and small-instance oracles.
//!
//! `certify` checks a candidate (prices, allocation) pair against the
//! equilibrium definition: per-agent best-response gaps, normalized KKT
//! stationarity, complementary slackness, dual feasibility and budget
//! clearing. For Leontief leaves a pointwise stationarity residual under an
//! arbitrary supergradient selection is meaningless — the superdifferential
//! is a whole simplex — so the certificate fits the selection per leaf to
//! the prices, which is exactly the "some valid supergradient satisfies the
//! optimality condition" statement being verified.

use crate::allocation::Allocation;
use crate::best_response::best_response;
use crate::scalar::Real;
use crate::scenario::{validate_scenario, MarketScenario};
use crate::solver::EquilibriumResult;
use crate::utility::{eval_utility, UtilitySpec};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("too large: {dims} decision dimensions exceed the brute-force guard of {max}")]
    TooLarge { dims: usize, max: usize },
    #[error("invalid scenario for oracle use")]
    InvalidScenario,
}

#[derive(Debug, Clone)]
pub struct CertificateReport<T> {
    /// Relative best-response gaps `(U(BR) − U(x*)) / max(1, U(BR))`.
    pub c1_gaps: Vec<T>,
    /// Scaled max-norm stationarity residual over active coordinates, with
    /// fitted supergradient selection and fitted ν.
    pub stationarity_residual: T,
    /// Scaled max complementary-slackness product over capacity/energy rows.
    pub complementarity_residual: T,
    /// Max fitted `ν_nk · x_nk`, scaled.
    pub nu_complementarity: T,
    pub dual_feasible: bool,
    pub primal_feasible: bool,
    /// Relative budget-clearing gaps `|Σ_k p_k x_nk − B_n| / max(1, B_n)`.
    pub budget_residuals: Vec<T>,
    pub nash_welfare: T,
    pub tolerance: T,
    pub pass: bool,
}

/// Certify a solver result against the market-equilibrium conditions at `tol`.
pub fn certify<T: Real>(
    s: &MarketScenario<T>,
    r: &EquilibriumResult<T>,
    tol: T,
) -> CertificateReport<T> {
    let scale = scenario_scale(s);
    let act_thresh = T::of(1e-7);
    let n_agents = s.n_agents();

    let utilities: Vec<T> = (0..n_agents)
        .map(|n| eval_utility(&s.agents[n].utility, r.allocation.agent_bundle(n)))
        .collect();

    let mut c1_gaps = Vec::with_capacity(n_agents);
    for (n, agent) in s.agents.iter().enumerate() {
        match best_response(agent, &r.prices, tol * T::of(1e-2)) {
            Ok(br) => c1_gaps.push((br.utility - utilities[n]) / T::one().max(br.utility)),
            Err(_) => c1_gaps.push(T::infinity()),
        }
    }

    let budget_residuals: Vec<T> = s
        .agents
        .iter()
        .enumerate()
        .map(|(n, a)| {
            let spent: T = r
                .prices
                .iter()
                .enumerate()
                .map(|(k, &p)| p * r.allocation.get(n, k))
                .sum();
            (spent - a.budget).abs() / T::one().max(a.budget)
        })
        .collect();

    let mut stationarity = T::zero();
    let mut nu_comp = T::zero();
    for (n, agent) in s.agents.iter().enumerate() {
        let x = r.allocation.agent_bundle(n);
        let u = utilities[n];
        if !(u > T::zero()) {
            stationarity = T::infinity();
            continue;
        }
        let Some(grad) = fit_supergradient(&agent.utility, x, &r.prices, agent.budget, u, act_thresh)
        else {
            stationarity = T::infinity();
            continue;
        };
        let q = agent.budget / u;
        for k in agent.utility.scoped_resources() {
            let marginal = q * grad[k.0];
            let nu = (r.prices[k.0] - marginal).max(T::zero());
            if x[k.0] > act_thresh {
                stationarity = stationarity.max((marginal - r.prices[k.0] + nu).abs());
                nu_comp = nu_comp.max(nu * x[k.0]);
            }
        }
    }

    let xbar = r.allocation.aggregate();
    let mut comp = T::zero();
    let mut primal_feasible = true;
    for (k, res) in s.resources.iter().enumerate() {
        if let Some(cap) = res.capacity.bound() {
            let slack = cap - xbar.get(k);
            comp = comp.max((r.capacity_duals[k] * slack).abs());
            primal_feasible &= slack >= -tol * scale;
        }
    }
    for (i, c) in s.energy_constraints.iter().enumerate() {
        let slack = c.limit - crate::energy::eval_energy(c, &xbar);
        comp = comp.max((r.energy_duals[i] * slack).abs());
        primal_feasible &= slack >= -tol * scale;
    }
    for n in 0..n_agents {
        for k in 0..s.n_resources() {
            primal_feasible &= r.allocation.get(n, k) >= -tol;
        }
    }
    let dual_feasible = r.capacity_duals.iter().all(|&g| g >= -tol)
        && r.energy_duals.iter().all(|&l| l >= -tol);

    let stationarity_residual = stationarity / scale;
    let complementarity_residual = comp / scale;
    let nu_complementarity = nu_comp / scale;
    let nash = nash_welfare(s, &r.allocation);

    let pass = c1_gaps.iter().all(|&g| g <= tol)
        && stationarity_residual <= tol
        && complementarity_residual <= tol
        && nu_complementarity <= tol
        && budget_residuals.iter().all(|&b| b <= tol)
        && dual_feasible
        && primal_feasible;

    CertificateReport {
        c1_gaps,
        stationarity_residual,
        complementarity_residual,
        nu_complementarity,
        dual_feasible,
        primal_feasible,
        budget_residuals,
        nash_welfare: nash,
        tolerance: tol,
        pass,
    }
}

pub(crate) fn scenario_scale<T: Real>(s: &MarketScenario<T>) -> T {
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
    scale
}

// --- fitted supergradient --------------------------------------------------

struct LeontiefTerm<T> {
    /// Chain coefficient of this leaf's value in the tree gradient.
    chain: T,
    /// (resource, demand) for coordinates at (or within `bind_tol` of) the min.
    binding: Vec<(usize, T)>,
}

// Tree gradient with Leontief selections left open: accumulates the smooth
// part and records one term per Leontief leaf. Returns the subtree value;
// None when a required derivative is undefined at `x` with positive value.
fn certificate_terms<T: Real>(
    u: &UtilitySpec<T>,
    x: &[T],
    chain: T,
    smooth: &mut Vec<T>,
    leaves: &mut Vec<LeontiefTerm<T>>,
) -> Option<T> {
    match u {
        UtilitySpec::Linear { weights } => {
            let mut val = T::zero();
            for &(r, v) in weights {
                val += v * x[r.0];
                smooth[r.0] += chain * v;
            }
            Some(val)
        }
        UtilitySpec::Leontief { demands } => {
            let ratios: Vec<T> = demands.iter().map(|&(r, d)| x[r.0] / d).collect();
            let t = ratios.iter().copied().fold(T::infinity(), T::min);
            let bind_tol = T::of(1e-3);
            let binding: Vec<(usize, T)> = demands
                .iter()
                .zip(&ratios)
                .filter(|&(_, &ratio)| ratio <= t * (T::one() + bind_tol) + T::of(1e-12))
                .map(|(&(r, d), _)| (r.0, d))
                .collect();
            leaves.push(LeontiefTerm { chain, binding });
            Some(t)
        }
        UtilitySpec::CobbDouglas { weights } => {
            let total: T = weights.iter().map(|&(_, w)| w).sum();
            let mut val = T::one();
            for &(r, w) in weights {
                val = val * x[r.0].powf(w / total);
            }
            if !(val > T::zero()) {
                return None;
            }
            for &(r, w) in weights {
                smooth[r.0] += chain * (w / total) * val / x[r.0];
            }
            Some(val)
        }
        UtilitySpec::Ces { rho, weights } => {
            let rho = *rho;
            let mut sum = T::zero();
            for &(r, v) in weights {
                if x[r.0] <= T::zero() && rho < T::zero() {
                    return None;
                }
                sum += v * x[r.0].powf(rho);
            }
            if !(sum > T::zero()) || !sum.is_finite() {
                return None;
            }
            let val = sum.powf(rho.recip());
            let outer = val.powf(T::one() - rho);
            for &(r, v) in weights {
                if x[r.0] > T::zero() {
                    smooth[r.0] += chain * outer * v * x[r.0].powf(rho - T::one());
                } else if rho < T::one() {
                    // infinite one-sided marginal on an inactive coordinate
                    smooth[r.0] = T::infinity();
                }
            }
            Some(val)
        }
        UtilitySpec::Nest { rho, children } => {
            let rho = *rho;
            if rho == T::one() {
                let mut val = T::zero();
                for (w, c) in children {
                    val += *w * certificate_terms(c, x, chain * *w, smooth, leaves)?;
                }
                return Some(val);
            }
            let vals: Vec<T> = children.iter().map(|(_, c)| eval_utility(c, x)).collect();
            let mut sum = T::zero();
            for ((w, _), &v) in children.iter().zip(&vals) {
                if v <= T::zero() && rho < T::zero() {
                    return None;
                }
                sum += *w * v.powf(rho);
            }
            if !(sum > T::zero()) || !sum.is_finite() {
                return None;
            }
            let val = sum.powf(rho.recip());
            let outer = val.powf(T::one() - rho);
            for ((w, c), &v) in children.iter().zip(&vals) {
                if v > T::zero() {
                    let slope = outer * *w * v.powf(rho - T::one());
                    certificate_terms(c, x, chain * slope, smooth, leaves)?;
                }
            }
            Some(val)
        }
    }
}

// Choose each Leontief leaf's superdifferential weights to minimize the
// stationarity residual (B/U)·g_k − p_k over its active binding coordinates:
// an exact per-leaf quadratic program over a simplex, solved by bisection on
// the water level. Leaves with disjoint scopes decouple; shared coordinates
// get a greedy sequential fit, which is conservative.
fn fit_supergradient<T: Real>(
    u: &UtilitySpec<T>,
    x: &[T],
    prices: &[T],
    budget: T,
    utility: T,
    act_thresh: T,
) -> Option<Vec<T>> {
    let mut smooth = vec![T::zero(); x.len()];
    let mut leaves = Vec::new();
    certificate_terms(u, x, T::one(), &mut smooth, &mut leaves)?;
    let mut grad = smooth;
    let q_scale = budget / utility;

    for leaf in &leaves {
        if leaf.binding.is_empty() {
            continue;
        }
        let active: Vec<(usize, T)> = leaf
            .binding
            .iter()
            .copied()
            .filter(|&(k, _)| x[k] > act_thresh)
            .collect();
        let has_absorber = active.len() < leaf.binding.len();

        let alloc: Vec<(usize, T, T)> = if active.is_empty() {
            // nothing measurable; park the whole selection on the first coordinate
            vec![(leaf.binding[0].0, leaf.binding[0].1, T::one())]
        } else {
            // residual per coordinate: q_k + m_k α_k with
            //   q_k = (B/U)·smooth_k − p_k,  m_k = (B/U)·chain/d_k
            let terms: Vec<(usize, T, T, T)> = active
                .iter()
                .map(|&(k, d)| {
                    let qk = q_scale * grad[k] - prices[k];
                    let mk = q_scale * leaf.chain / d;
                    (k, d, qk, mk)
                })
                .collect();
            let unconstrained: Vec<T> = terms
                .iter()
                .map(|&(_, _, qk, mk)| (-qk / mk).max(T::zero()))
                .collect();
            let total: T = unconstrained.iter().copied().sum();
            let shares: Vec<T> = if has_absorber && total <= T::one() {
                unconstrained
            } else {
                waterfill_simplex(&terms)
            };
            terms
                .iter()
                .zip(&shares)
                .map(|(&(k, d, _, _), &a)| (k, d, a))
                .collect()
        };
        for &(k, d, a) in &alloc {
            grad[k] += leaf.chain * a / d;
        }
    }
    Some(grad)
}

// Minimize Σ (q_k + m_k α_k)² subject to α ≥ 0, Σ α = 1. The KKT solution is
// α_k(θ) = max(0, (θ − 2 m_k q_k) / (2 m_k²)) with Σ α(θ) = 1; Σ is
// non-decreasing in θ, so bisection pins θ.
fn waterfill_simplex<T: Real>(terms: &[(usize, T, T, T)]) -> Vec<T> {
    let alpha_at = |theta: T| -> Vec<T> {
        terms
            .iter()
            .map(|&(_, _, q, m)| ((theta - (m + m) * q) / ((m + m) * m)).max(T::zero()))
            .collect()
    };
    let sum_at = |theta: T| -> T { alpha_at(theta).into_iter().sum() };

    let mut lo = terms
        .iter()
        .map(|&(_, _, q, m)| (m + m) * q)
        .fold(T::infinity(), T::min);
    let mut hi = lo.max(T::zero()) + T::one();
    for _ in 0..200 {
        if sum_at(hi) >= T::one() {
            break;
        }
        hi = hi + hi + T::one();
    }
    for _ in 0..200 {
        let mid = (lo + hi) * T::of(0.5);
        if sum_at(mid) >= T::one() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut alpha = alpha_at(hi);
    // exact renormalization guards the simplex constraint against bisection residue
    let total: T = alpha.iter().copied().sum();
    if total > T::zero() {
        for a in alpha.iter_mut() {
            *a /= total;
        }
    }
    alpha
}

/// Nash welfare `Σ_n B_n log U_n(x_n)`; `-inf` when any utility is zero.
pub fn nash_welfare<T: Real>(s: &MarketScenario<T>, x: &Allocation<T>) -> T {
    let mut total = T::zero();
    for (n, a) in s.agents.iter().enumerate() {
        let u = eval_utility(&a.utility, x.agent_bundle(n));
        if !(u > T::zero()) {
            return T::neg_infinity();
        }
        total += a.budget * u.ln();
    }
    total
}

// --- brute-force oracle ------------------------------------------------------

const BRUTE_FORCE_MAX_DIMS: usize = 6;

/// Exhaustive grid search over feasible allocations, maximizing Nash welfare.
///
/// Returns the best grid point and its log-welfare. Guarded to at most six
/// decision dimensions (valued agent-resource pairs); independent of the
/// solver by construction — it only uses `eval_utility` and the raw
/// constraint definitions.
pub fn brute_force_optimum<T: Real>(
    s: &MarketScenario<T>,
    grid_step: T,
) -> Result<(Allocation<T>, T), VerifyError> {
    if !validate_scenario(s).is_valid() {
        return Err(VerifyError::InvalidScenario);
    }
    let n_res = s.n_resources();
    let mut dims: Vec<(usize, usize)> = Vec::new();
    for (n, a) in s.agents.iter().enumerate() {
        for r in a.utility.scoped_resources() {
            dims.push((n, r.0));
        }
    }
    if dims.len() > BRUTE_FORCE_MAX_DIMS {
        return Err(VerifyError::TooLarge { dims: dims.len(), max: BRUTE_FORCE_MAX_DIMS });
    }

    // per-dimension ceiling from capacity or any scoping energy constraint
    let upper: Vec<T> = dims
        .iter()
        .map(|&(_, k)| {
            let mut ub = s.resources[k].capacity.bound().unwrap_or(T::infinity());
            for c in &s.energy_constraints {
                for &(r, beta) in &c.terms {
                    if r.0 == k {
                        ub = ub.min(c.limit.powf(beta.recip()));
                    }
                }
            }
            ub
        })
        .collect();

    let mut state = GridState {
        s,
        dims: &dims,
        upper: &upper,
        step: grid_step,
        point: vec![T::zero(); dims.len()],
        xbar: vec![T::zero(); n_res],
        scratch: vec![T::zero(); n_res],
        best_product: T::neg_infinity(),
        best_point: vec![T::zero(); dims.len()],
    };
    descend(&mut state, 0, T::one());

    let mut allocation = Allocation::zeros(s.n_agents(), n_res);
    for (&(n, k), &v) in dims.iter().zip(&state.best_point) {
        allocation.set(n, k, v);
    }
    let welfare = if state.best_product > T::zero() {
        nash_welfare(s, &allocation)
    } else {
        T::neg_infinity()
    };
    Ok((allocation, welfare))
}

struct GridState<'a, T> {
    s: &'a MarketScenario<T>,
    dims: &'a [(usize, usize)],
    upper: &'a [T],
    step: T,
    point: Vec<T>,
    xbar: Vec<T>,
    scratch: Vec<T>,
    best_product: T,
    best_point: Vec<T>,
}

// Nested enumeration, agent-major. `partial` carries Π U_n^{B_n} over agents
// whose coordinates are already fixed; utilities only ever shrink the search
// when they hit zero, and constraint sums only grow, so both prune safely.
fn descend<T: Real>(state: &mut GridState<'_, T>, level: usize, partial: T) {
    if level == state.dims.len() {
        if partial > state.best_product {
            state.best_product = partial;
            state.best_point = state.point.clone();
        }
        return;
    }
    let (agent, resource) = state.dims[level];
    let closes_agent =
        level + 1 == state.dims.len() || state.dims[level + 1].0 != agent;
    let ub = state.upper[level];
    let guard = state.step * T::of(1e-9);

    let mut j = 0usize;
    loop {
        let v = state.step * T::from_usize(j).unwrap();
        if v > ub + guard {
            break;
        }
        j += 1;
        state.point[level] = v;
        state.xbar[resource] += v;

        let feasible = (|| {
            if let Some(cap) = state.s.resources[resource].capacity.bound() {
                if state.xbar[resource] > cap + guard {
                    return false;
                }
            }
            for c in &state.s.energy_constraints {
                // partial aggregates only grow, so a violated prefix prunes
                if c.eval_raw(&state.xbar) > c.limit * (T::one() + T::of(1e-12)) {
                    return false;
                }
            }
            true
        })();

        if feasible {
            let next_partial = if closes_agent {
                let b = agent_bundle_from_point(state, agent);
                let u = eval_utility(&state.s.agents[agent].utility, &b);
                if u > T::zero() {
                    partial * u.powf(state.s.agents[agent].budget)
                } else {
                    T::zero()
                }
            } else {
                partial
            };
            // a zero product can never beat a positive one, and deeper levels
            // only touch other agents' utilities
            if !(closes_agent && next_partial == T::zero() && state.best_product > T::zero()) {
                descend(state, level + 1, next_partial);
            }
        }

        state.xbar[resource] -= v;
        if !feasible {
            // larger v only makes it worse
            break;
        }
    }
    state.point[level] = T::zero();
}

fn agent_bundle_from_point<T: Real>(state: &GridState<'_, T>, agent: usize) -> Vec<T> {
    let mut b = vec![T::zero(); state.s.n_resources()];
    for (&(n, k), &v) in state.dims.iter().zip(&state.point) {
        if n == agent {
            b[k] = v;
        }
    }
    b
}

// --- proportional fairness ---------------------------------------------------

#[derive(Debug, Clone)]
pub struct FairnessLine<T> {
    /// `Σ_n B_n (U_n(alt) − U_n(x*)) / U_n(x*)`; `None` if the alternative
    /// was infeasible and skipped.
    pub weighted_change: Option<T>,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct FairnessReport<T> {
    pub lines: Vec<FairnessLine<T>>,
    pub skipped: usize,
    pub pass: bool,
}

/// First-order proportional-fairness test: at the equilibrium allocation, no
/// feasible alternative may raise the budget-weighted sum of proportional
/// utility changes above `tol`.
pub fn proportional_fairness_check<T: Real>(
    s: &MarketScenario<T>,
    x_star: &Allocation<T>,
    alternatives: &[Allocation<T>],
    tol: T,
) -> FairnessReport<T> {
    let scale = scenario_scale(s);
    let feas_tol = T::of(1e-9) * scale;
    let base: Vec<T> = (0..s.n_agents())
        .map(|n| eval_utility(&s.agents[n].utility, x_star.agent_bundle(n)))
        .collect();

    let mut lines = Vec::with_capacity(alternatives.len());
    let mut skipped = 0usize;
    for alt in alternatives {
        if !is_feasible(s, alt, feas_tol) {
            skipped += 1;
            lines.push(FairnessLine { weighted_change: None, pass: true });
            continue;
        }
        let mut sum = T::zero();
        for (n, a) in s.agents.iter().enumerate() {
            let u_alt = eval_utility(&a.utility, alt.agent_bundle(n));
            sum += a.budget * (u_alt - base[n]) / base[n];
        }
        lines.push(FairnessLine { weighted_change: Some(sum), pass: sum <= tol });
    }
    let pass = lines.iter().all(|l| l.pass);
    FairnessReport { lines, skipped, pass }
}

fn is_feasible<T: Real>(s: &MarketScenario<T>, x: &Allocation<T>, tol: T) -> bool {
    for n in 0..s.n_agents() {
        for k in 0..s.n_resources() {
            if x.get(n, k) < -tol {
                return false;
            }
        }
    }
    let xbar = x.aggregate();
    for (k, r) in s.resources.iter().enumerate() {
        if let Some(cap) = r.capacity.bound() {
            if xbar.get(k) > cap + tol {
                return false;
            }
        }
    }
    s.energy_constraints
        .iter()
        .all(|c| crate::energy::eval_energy(c, &xbar) <= c.limit + tol)
}
