//! Lifted problem construction.
//!
//! The equilibrium program maximizes `Σ_n B_n log U_n(x_n)` subject to
//! capacity and energy constraints. Leontief leaves make `U_n` nonsmooth, so
//! each one is lifted into an epigraph variable `t` with rows `d_k t ≤ x_k`;
//! the lifted utility is then smooth on the interior and agrees with the
//! original at any point where the `t` are pushed to their bounds. CES
//! nests and the other leaves stay as smooth expressions.
//!
//! Variables exist only for (agent, resource) pairs the agent's utility
//! actually references; everything else is fixed at zero.

use crate::scalar::Real;
use crate::scenario::{Capacity, MarketScenario, ResourceId, ValidationReport};
use crate::utility::UtilitySpec;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("invalid scenario:\n{0}")]
    InvalidScenario(ValidationReport),
    #[error("infeasible scenario: {0}")]
    Infeasible(String),
    #[error("agent starved: {0}")]
    AgentStarved(String),
}

/// Which concave objective the barrier engine maximizes.
#[derive(Debug, Clone)]
pub enum Objective<T> {
    /// `Σ_n coeff_n · log Û_n` — the equilibrium program (coefficients are budgets).
    BudgetLog(Vec<T>),
    /// `Σ_n coeff_n · Û_n` — the social-optimum program (coefficients are weights).
    WeightedSum(Vec<T>),
}

/// Smooth lifted expression over solver variables.
#[derive(Debug, Clone)]
pub(crate) enum Expr<T> {
    /// Epigraph variable standing in for a Leontief leaf value.
    TVar(usize),
    Linear { terms: Vec<(usize, T)> },
    /// Exponents pre-normalized to sum to one.
    CobbDouglas { terms: Vec<(usize, T)> },
    Ces { rho: T, terms: Vec<(usize, T)> },
    Nest { rho: T, children: Vec<(T, Expr<T>)> },
}

/// One barrier-enforced inequality, kept with slack > 0 throughout.
#[derive(Debug, Clone)]
pub(crate) enum Row<T> {
    /// `z_v ≥ 0` for an allocation variable.
    XNonNeg { var: usize },
    /// `z_v ≥ 0` for an epigraph variable.
    TNonNeg { var: usize },
    /// `demand · z_t ≤ z_x`.
    Epigraph { t: usize, x: usize, demand: T },
    /// `Σ_v z_v ≤ cap` over all agents' variables for one resource.
    Capacity { resource: usize, cap: T, vars: Vec<usize> },
    /// `e_i(x̄(z)) ≤ E_i`.
    Energy { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum VarKind {
    X { agent: usize, resource: usize },
    T { agent: usize },
}

#[derive(Debug, Clone)]
pub struct EgProblem<T> {
    pub scenario: MarketScenario<T>,
    pub(crate) objective: Objective<T>,
    pub(crate) n_vars: usize,
    pub(crate) kinds: Vec<VarKind>,
    /// `x_index[n * K + k]` → solver variable for `x_nk`, if the agent values `k`.
    pub(crate) x_index: Vec<Option<usize>>,
    /// variable list per agent (x vars then t vars), for per-agent sums
    pub(crate) agent_vars: Vec<Vec<usize>>,
    /// all x variables contributing to `x̄_k`
    pub(crate) resource_vars: Vec<Vec<usize>>,
    pub(crate) exprs: Vec<Expr<T>>,
    pub(crate) rows: Vec<Row<T>>,
    pub(crate) start: Vec<T>,
}

impl<T: Real> EgProblem<T> {
    pub fn n_variables(&self) -> usize {
        self.n_vars
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_epigraph_variables(&self) -> usize {
        self.kinds.iter().filter(|k| matches!(k, VarKind::T { .. })).count()
    }

    pub(crate) fn aggregate_usage(&self, z: &[T]) -> Vec<T> {
        self.resource_vars
            .iter()
            .map(|vars| vars.iter().map(|&v| z[v]).sum())
            .collect()
    }

    /// Slack of one row at `z` (positive inside the feasible interior).
    pub(crate) fn slack(&self, row: &Row<T>, z: &[T], xbar: &[T]) -> T {
        match row {
            Row::XNonNeg { var } | Row::TNonNeg { var } => z[*var],
            Row::Epigraph { t, x, demand } => z[*x] - *demand * z[*t],
            Row::Capacity { cap, vars, .. } => {
                *cap - vars.iter().map(|&v| z[v]).sum::<T>()
            }
            Row::Energy { index } => {
                let c = &self.scenario.energy_constraints[*index];
                c.limit - c.eval_raw(xbar)
            }
        }
    }
}

/// Build the lifted program for the equilibrium objective.
pub fn build_problem<T: Real>(s: &MarketScenario<T>) -> Result<EgProblem<T>, BuildError> {
    let budgets = s.agents.iter().map(|a| a.budget).collect();
    build_with_objective(s, Objective::BudgetLog(budgets))
}

/// Build the same feasible set with an arbitrary objective (used by the
/// social-optimum baseline).
pub fn build_with_objective<T: Real>(
    s: &MarketScenario<T>,
    objective: Objective<T>,
) -> Result<EgProblem<T>, BuildError> {
    let report = crate::scenario::validate_scenario(s);
    if !report.is_valid() {
        return Err(BuildError::InvalidScenario(report));
    }

    let n_agents = s.n_agents();
    let n_res = s.n_resources();
    let mut kinds = Vec::new();
    let mut x_index = vec![None; n_agents * n_res];
    let mut agent_vars: Vec<Vec<usize>> = vec![Vec::new(); n_agents];
    let mut resource_vars: Vec<Vec<usize>> = vec![Vec::new(); n_res];
    let mut rows = Vec::new();
    let mut exprs = Vec::new();

    for (n, agent) in s.agents.iter().enumerate() {
        for r in agent.utility.scoped_resources() {
            let v = kinds.len();
            kinds.push(VarKind::X { agent: n, resource: r.0 });
            x_index[n * n_res + r.0] = Some(v);
            agent_vars[n].push(v);
            resource_vars[r.0].push(v);
            rows.push(Row::XNonNeg { var: v });
        }
    }
    for (n, agent) in s.agents.iter().enumerate() {
        let expr = lift(&agent.utility, n, n_res, &x_index, &mut kinds, &mut agent_vars, &mut rows);
        exprs.push(expr);
    }
    for (k, res) in s.resources.iter().enumerate() {
        if let Capacity::Bounded(cap) = res.capacity {
            if !resource_vars[k].is_empty() {
                rows.push(Row::Capacity { resource: k, cap, vars: resource_vars[k].clone() });
            }
        }
    }
    for i in 0..s.energy_constraints.len() {
        rows.push(Row::Energy { index: i });
    }

    let mut problem = EgProblem {
        scenario: s.clone(),
        objective,
        n_vars: kinds.len(),
        kinds,
        x_index,
        agent_vars,
        resource_vars,
        exprs,
        rows,
        start: Vec::new(),
    };
    problem.start = interior_start(&problem)?;

    // An agent whose lifted utility is still zero at a strictly interior
    // point can never contribute a finite log term.
    for (n, agent) in s.agents.iter().enumerate() {
        let u0 = problem.exprs[n].eval(&problem.start);
        if !(u0 > T::zero()) || !u0.is_finite() {
            return Err(BuildError::AgentStarved(agent.name.clone()));
        }
    }
    Ok(problem)
}

fn lift<T: Real>(
    u: &UtilitySpec<T>,
    agent: usize,
    n_res: usize,
    x_index: &[Option<usize>],
    kinds: &mut Vec<VarKind>,
    agent_vars: &mut [Vec<usize>],
    rows: &mut Vec<Row<T>>,
) -> Expr<T> {
    let xv = |r: ResourceId| x_index[agent * n_res + r.0].expect("valued resource has a variable");
    match u {
        UtilitySpec::Linear { weights } => Expr::Linear {
            terms: weights.iter().map(|&(r, w)| (xv(r), w)).collect(),
        },
        UtilitySpec::CobbDouglas { weights } => {
            let total: T = weights.iter().map(|&(_, w)| w).sum();
            Expr::CobbDouglas {
                terms: weights.iter().map(|&(r, w)| (xv(r), w / total)).collect(),
            }
        }
        UtilitySpec::Ces { rho, weights } => Expr::Ces {
            rho: *rho,
            terms: weights.iter().map(|&(r, w)| (xv(r), w)).collect(),
        },
        UtilitySpec::Leontief { demands } => {
            let t = kinds.len();
            kinds.push(VarKind::T { agent });
            agent_vars[agent].push(t);
            rows.push(Row::TNonNeg { var: t });
            for &(r, d) in demands {
                rows.push(Row::Epigraph { t, x: xv(r), demand: d });
            }
            Expr::TVar(t)
        }
        UtilitySpec::Nest { rho, children } => Expr::Nest {
            rho: *rho,
            children: children
                .iter()
                .map(|(w, c)| (*w, lift(c, agent, n_res, x_index, kinds, agent_vars, rows)))
                .collect(),
        },
    }
}

// Strictly feasible start: spread bounded capacity evenly, take unit amounts
// of unbounded resources, then halve everything until the energy constraints
// have comfortable slack. Scaling preserves the epigraph and capacity slack
// signs, and energy consumption vanishes as the scale goes to zero, so this
// terminates for any validated scenario with reasonable limits.
fn interior_start<T: Real>(p: &EgProblem<T>) -> Result<Vec<T>, BuildError> {
    let s = &p.scenario;
    let mut z = vec![T::zero(); p.n_vars];
    for (v, kind) in p.kinds.iter().enumerate() {
        if let VarKind::X { resource, .. } = kind {
            let sharers = T::from_usize(p.resource_vars[*resource].len().max(1)).unwrap();
            z[v] = match s.resources[*resource].capacity {
                Capacity::Bounded(c) => c / (sharers + sharers),
                Capacity::Unbounded => T::one(),
            };
        }
    }
    for (n, agent) in s.agents.iter().enumerate() {
        seed_epigraph(&agent.utility, n, s.n_resources(), p, &mut z);
    }

    let margin = T::of(0.75);
    for _ in 0..300 {
        let xbar = p.aggregate_usage(&z);
        let ok = s
            .energy_constraints
            .iter()
            .all(|c| c.eval_raw(&xbar) <= margin * c.limit);
        if ok {
            let tiny = T::of(1e-300);
            if z.iter().any(|&v| v < tiny) {
                return Err(BuildError::Infeasible(
                    "no interior point with representable positive coordinates".into(),
                ));
            }
            return Ok(z);
        }
        for v in z.iter_mut() {
            *v = *v * T::of(0.5);
        }
    }
    Err(BuildError::Infeasible(
        "could not scale into the energy limits".into(),
    ))
}

// Walk the utility tree in the same order as `lift` so epigraph variables
// line up, setting each t strictly inside its bound.
fn seed_epigraph<T: Real>(
    u: &UtilitySpec<T>,
    agent: usize,
    n_res: usize,
    p: &EgProblem<T>,
    z: &mut Vec<T>,
) {
    match u {
        UtilitySpec::Leontief { demands } => {
            let t = next_unset_t(agent, p, z);
            let bound = demands
                .iter()
                .map(|&(r, d)| z[p.x_index[agent * n_res + r.0].unwrap()] / d)
                .fold(T::infinity(), T::min);
            z[t] = bound * T::of(0.5);
        }
        UtilitySpec::Nest { children, .. } => {
            for (_, c) in children {
                seed_epigraph(c, agent, n_res, p, z);
            }
        }
        _ => {}
    }
}

fn next_unset_t<T: Real>(agent: usize, p: &EgProblem<T>, z: &[T]) -> usize {
    *p.agent_vars[agent]
        .iter()
        .find(|&&v| matches!(p.kinds[v], VarKind::T { .. }) && z[v] == T::zero())
        .expect("epigraph variable seeded once")
}

impl<T: Real> Expr<T> {
    pub(crate) fn eval(&self, z: &[T]) -> T {
        match self {
            Expr::TVar(v) => z[*v],
            Expr::Linear { terms } => terms.iter().map(|&(v, w)| w * z[v]).sum(),
            Expr::CobbDouglas { terms } => {
                let mut acc = T::one();
                for &(v, a) in terms {
                    acc = acc * z[v].powf(a);
                }
                acc
            }
            Expr::Ces { rho, terms } => {
                let s: T = terms.iter().map(|&(v, w)| w * z[v].powf(*rho)).sum();
                s.powf(rho.recip())
            }
            Expr::Nest { rho, children } => {
                if *rho == T::one() {
                    children.iter().map(|(w, c)| *w * c.eval(z)).sum()
                } else {
                    let s: T = children.iter().map(|(w, c)| *w * c.eval(z).powf(*rho)).sum();
                    s.powf(rho.recip())
                }
            }
        }
    }

    /// Value, gradient and Hessian over the full variable vector. Only valid
    /// on the strict interior (all referenced variables positive).
    pub(crate) fn eval_grad_hess(&self, z: &[T], n_vars: usize) -> (T, Vec<T>, Vec<T>) {
        match self {
            Expr::TVar(v) => {
                let mut g = vec![T::zero(); n_vars];
                g[*v] = T::one();
                (z[*v], g, vec![T::zero(); n_vars * n_vars])
            }
            Expr::Linear { terms } => {
                let mut g = vec![T::zero(); n_vars];
                let mut val = T::zero();
                for &(v, w) in terms {
                    val += w * z[v];
                    g[v] += w;
                }
                (val, g, vec![T::zero(); n_vars * n_vars])
            }
            Expr::CobbDouglas { terms } => {
                let mut val = T::one();
                for &(v, a) in terms {
                    val = val * z[v].powf(a);
                }
                let mut g = vec![T::zero(); n_vars];
                let mut h = vec![T::zero(); n_vars * n_vars];
                for &(v, a) in terms {
                    g[v] += a * val / z[v];
                }
                for &(vi, ai) in terms {
                    for &(vj, aj) in terms {
                        h[vi * n_vars + vj] += val * ai * aj / (z[vi] * z[vj]);
                    }
                    h[vi * n_vars + vi] -= val * ai / (z[vi] * z[vi]);
                }
                (val, g, h)
            }
            Expr::Ces { rho, terms } => {
                let children: Vec<(T, Expr<T>)> = terms
                    .iter()
                    .map(|&(v, w)| (w, Expr::TVar(v)))
                    .collect();
                ces_grad_hess(*rho, &children, z, n_vars)
            }
            Expr::Nest { rho, children } => ces_grad_hess(*rho, children, z, n_vars),
        }
    }
}

// Value/gradient/Hessian of u = (Σ w_c u_c^ρ)^{1/ρ}; ρ = 1 degenerates to a
// weighted sum with no curvature of its own.
fn ces_grad_hess<T: Real>(
    rho: T,
    children: &[(T, Expr<T>)],
    z: &[T],
    n_vars: usize,
) -> (T, Vec<T>, Vec<T>) {
    let parts: Vec<(T, Vec<T>, Vec<T>)> =
        children.iter().map(|(_, c)| c.eval_grad_hess(z, n_vars)).collect();
    let mut g = vec![T::zero(); n_vars];
    let mut h = vec![T::zero(); n_vars * n_vars];

    if rho == T::one() {
        let mut val = T::zero();
        for ((w, _), (u, gc, hc)) in children.iter().zip(&parts) {
            val += *w * *u;
            for v in 0..n_vars {
                g[v] += *w * gc[v];
            }
            for (hv, hcv) in h.iter_mut().zip(hc) {
                *hv += *w * *hcv;
            }
        }
        return (val, g, h);
    }

    let one = T::one();
    let s: T = children
        .iter()
        .zip(&parts)
        .map(|((w, _), (u, _, _))| *w * u.powf(rho))
        .sum();
    let val = s.powf(rho.recip());

    // a_c = ∂u/∂u_c, diagonal and rank-one pieces of ∂²u
    let u_out_1 = val.powf(one - rho);
    let u_out_2 = val.powf(one - rho - rho);
    let slopes: Vec<T> = children
        .iter()
        .zip(&parts)
        .map(|((w, _), (u, _, _))| u_out_1 * *w * u.powf(rho - one))
        .collect();

    for (a_c, (_, gc, hc)) in slopes.iter().zip(&parts) {
        for v in 0..n_vars {
            g[v] += *a_c * gc[v];
        }
        for (hv, hcv) in h.iter_mut().zip(hc) {
            *hv += *a_c * *hcv;
        }
    }
    for (ci, ((wi, _), (ui, gi, _))) in children.iter().zip(&parts).enumerate() {
        for (cj, ((wj, _), (uj, gj, _))) in children.iter().zip(&parts).enumerate() {
            let mut b = (one - rho) * u_out_2 * *wi * ui.powf(rho - one) * *wj * uj.powf(rho - one);
            if ci == cj {
                b -= (one - rho) * u_out_1 * *wi * ui.powf(rho - one - one);
            }
            if b != T::zero() {
                for vi in 0..n_vars {
                    if gi[vi] == T::zero() {
                        continue;
                    }
                    let bi = b * gi[vi];
                    for vj in 0..n_vars {
                        h[vi * n_vars + vj] += bi * gj[vj];
                    }
                }
            }
        }
    }
    (val, g, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::EnergyConstraint;
    use crate::scenario::{Agent, Resource};
    use approx::assert_relative_eq;

    fn rid(i: usize) -> ResourceId {
        ResourceId(i)
    }

    fn single_linear() -> MarketScenario<f64> {
        MarketScenario {
            agents: vec![Agent {
                name: "only".into(),
                budget: 1.0,
                utility: UtilitySpec::Linear { weights: vec![(rid(0), 1.0)] },
            }],
            resources: vec![Resource { name: "r".into(), capacity: Capacity::Bounded(1.0) }],
            energy_constraints: vec![],
        }
    }

    #[test]
    fn minimal_instance_shape() {
        let p = build_problem(&single_linear()).unwrap();
        assert_eq!(p.n_variables(), 1);
        assert_eq!(p.n_epigraph_variables(), 0);
        // one non-negativity row plus one capacity row
        assert_eq!(p.n_rows(), 2);
    }

    #[test]
    fn leontief_sum_shape() {
        // two agents, two Leontief leaves each over disjoint 3-resource sites
        let leaf = |base: usize| UtilitySpec::Leontief {
            demands: vec![(rid(base), 2.0), (rid(base + 1), 8.0), (rid(base + 2), 10.0)],
        };
        let s = MarketScenario {
            agents: (0..2)
                .map(|n| Agent {
                    name: format!("a{n}"),
                    budget: 0.5,
                    utility: UtilitySpec::sum(vec![leaf(0), leaf(3)]),
                })
                .collect(),
            resources: (0..6)
                .map(|k| Resource {
                    name: format!("r{k}"),
                    capacity: Capacity::Bounded(100.0),
                })
                .collect(),
            energy_constraints: vec![],
        };
        let p = build_problem(&s).unwrap();
        // 2 agents × 6 allocation variables + 4 epigraph variables
        assert_eq!(p.n_variables(), 16);
        assert_eq!(p.n_epigraph_variables(), 4);
    }

    #[test]
    fn oversized_demand_scales_into_energy_limit() {
        let mut s = single_linear();
        s.resources[0].capacity = Capacity::Unbounded;
        s.energy_constraints.push(EnergyConstraint {
            label: "e".into(),
            terms: vec![(rid(0), 2.0)],
            limit: 1e-6,
        });
        let p = build_problem(&s).unwrap();
        let xbar = p.aggregate_usage(&p.start);
        assert!(s.energy_constraints[0].eval_raw(&xbar) < 1e-6);
        assert!(p.start[0] > 0.0);
    }

    #[test]
    fn invalid_scenario_is_rejected() {
        let mut s = single_linear();
        s.agents[0].budget = -1.0;
        assert!(matches!(build_problem(&s), Err(BuildError::InvalidScenario(_))));
    }

    #[test]
    fn expr_gradients_match_finite_differences() {
        // nest(rho=0.5) over a CES(-1) leaf and a linear leaf, 3 vars
        let expr: Expr<f64> = Expr::Nest {
            rho: 0.5,
            children: vec![
                (1.5, Expr::Ces { rho: -1.0, terms: vec![(0, 1.0), (1, 2.0)] }),
                (0.5, Expr::Linear { terms: vec![(2, 3.0)] }),
            ],
        };
        let z = vec![0.7, 1.3, 2.1];
        let (_, g, h) = expr.eval_grad_hess(&z, 3);
        let hstep = 1e-5;
        for i in 0..3 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += hstep;
            zm[i] -= hstep;
            let fd = (expr.eval(&zp) - expr.eval(&zm)) / (2.0 * hstep);
            assert_relative_eq!(g[i], fd, epsilon = 1e-7, max_relative = 1e-6);
            for j in 0..3 {
                let (_, gp, _) = expr.eval_grad_hess(&zp, 3);
                let (_, gm, _) = expr.eval_grad_hess(&zm, 3);
                let fd2 = (gp[j] - gm[j]) / (2.0 * hstep);
                assert_relative_eq!(h[i * 3 + j], fd2, epsilon = 1e-6, max_relative = 1e-5);
            }
        }
    }
}
