//! Log-barrier interior-point engine.
//!
//! Minimizes `-objective(z) - μ Σ log(slack)` with damped Newton steps,
//! shrinking μ along a fixed schedule. Dual estimates come from the barrier
//! terms (`dual = μ / slack`) and are then refined by one non-negative
//! least-squares fit of the stationarity system at the final iterate.
//! Everything is deterministic: fixed iteration order, no randomness.

use super::linalg::{nnls, solve_spd};
use super::problem::{EgProblem, Objective, Row, VarKind};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct SolverConfig<T> {
    /// Max-norm bound on scaled KKT residuals at the solution.
    pub kkt_tolerance: T,
    /// Initial barrier parameter μ.
    pub barrier_init_mu: T,
    /// Multiplicative μ reduction per outer iteration, in (0, 1).
    pub barrier_reduction: T,
    pub max_outer_iterations: usize,
    pub max_newton_steps: usize,
    /// Coordinates this close to zero count as boundary-active.
    pub interior_epsilon: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        SolverConfig {
            kkt_tolerance: T::of(1e-6),
            barrier_init_mu: T::one(),
            barrier_reduction: T::of(0.2),
            max_outer_iterations: 60,
            max_newton_steps: 50,
            interior_epsilon: T::of(1e-9),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierOutcome<T> {
    pub z: Vec<T>,
    pub final_mu: T,
    /// Refined capacity duals, dense over resources (zero when unbounded).
    pub gamma: Vec<T>,
    /// Refined energy duals, dense over constraints.
    pub lambda: Vec<T>,
    pub outer_iterations: usize,
    pub newton_steps: usize,
    /// Max-norm residual of the stationarity fit (unscaled).
    pub fit_residual: T,
    /// True objective value after each outer stage.
    pub objective_path: Vec<T>,
}

pub(crate) enum BarrierStatus<T> {
    Converged(BarrierOutcome<T>),
    OutOfIterations(BarrierOutcome<T>),
    Failed(String),
}

/// Characteristic scale for residual normalization:
/// `max(1, ‖coeff‖∞, ‖E‖∞, ‖C‖∞)`.
pub(crate) fn problem_scale<T: Real>(p: &EgProblem<T>) -> T {
    let mut s = T::one();
    let coeffs = match &p.objective {
        Objective::BudgetLog(b) => b,
        Objective::WeightedSum(w) => w,
    };
    for &c in coeffs {
        s = s.max(c.abs());
    }
    for c in &p.scenario.energy_constraints {
        s = s.max(c.limit);
    }
    for r in &p.scenario.resources {
        if let Some(c) = r.capacity.bound() {
            s = s.max(c);
        }
    }
    s
}

// Final barrier parameter. For the equilibrium objective the budget-clearing
// error grows like μ times the number of rows touching one agent, so μ must
// end well below tolerance·min(budget); the social objective only needs the
// complementarity products μ to clear the scaled tolerance.
fn stop_mu<T: Real>(p: &EgProblem<T>, cfg: &SolverConfig<T>) -> T {
    let floor = T::of(1e-12);
    match &p.objective {
        Objective::BudgetLog(budgets) => {
            let min_b = budgets.iter().fold(T::infinity(), |a, &b| a.min(b));
            let rows_per_agent = max_agent_rows(p);
            let r = T::from_usize(rows_per_agent.max(1)).unwrap();
            (cfg.kkt_tolerance * T::one().max(min_b) / (T::of(4.0) * r)).max(floor)
        }
        Objective::WeightedSum(_) => {
            (cfg.kkt_tolerance * problem_scale(p) * T::of(0.25)).max(floor)
        }
    }
}

fn max_agent_rows<T: Real>(p: &EgProblem<T>) -> usize {
    let n_agents = p.scenario.n_agents();
    let mut counts = vec![0usize; n_agents];
    for row in &p.rows {
        match row {
            Row::XNonNeg { var } | Row::TNonNeg { var } => match p.kinds[*var] {
                VarKind::X { agent, .. } | VarKind::T { agent } => counts[agent] += 1,
            },
            Row::Epigraph { t, .. } => match p.kinds[*t] {
                VarKind::T { agent } => counts[agent] += 1,
                VarKind::X { .. } => unreachable!(),
            },
            _ => {}
        }
    }
    counts.into_iter().max().unwrap_or(1)
}

fn true_objective<T: Real>(p: &EgProblem<T>, z: &[T]) -> T {
    match &p.objective {
        Objective::BudgetLog(b) => p
            .exprs
            .iter()
            .zip(b)
            .map(|(e, &bn)| bn * e.eval(z).ln())
            .sum(),
        Objective::WeightedSum(w) => p
            .exprs
            .iter()
            .zip(w)
            .map(|(e, &wn)| wn * e.eval(z))
            .sum(),
    }
}

// Barrier value; None outside the feasible interior.
fn phi<T: Real>(p: &EgProblem<T>, z: &[T], mu: T) -> Option<T> {
    let mut val = T::zero();
    match &p.objective {
        Objective::BudgetLog(b) => {
            for (e, &bn) in p.exprs.iter().zip(b) {
                let u = e.eval(z);
                if !(u > T::zero()) || !u.is_finite() {
                    return None;
                }
                val -= bn * u.ln();
            }
        }
        Objective::WeightedSum(w) => {
            for (e, &wn) in p.exprs.iter().zip(w) {
                let u = e.eval(z);
                if !u.is_finite() {
                    return None;
                }
                val -= wn * u;
            }
        }
    }
    let xbar = p.aggregate_usage(z);
    for row in &p.rows {
        let s = p.slack(row, z, &xbar);
        if !(s > T::zero()) || !s.is_finite() {
            return None;
        }
        val -= mu * s.ln();
    }
    if val.is_finite() {
        Some(val)
    } else {
        None
    }
}

// Gradient and Hessian of the barrier function at an interior point.
fn grad_hess<T: Real>(p: &EgProblem<T>, z: &[T], mu: T) -> Option<(T, Vec<T>, Vec<T>)> {
    let n = p.n_vars;
    let mut g = vec![T::zero(); n];
    let mut h = vec![T::zero(); n * n];
    let mut val = T::zero();

    match &p.objective {
        Objective::BudgetLog(b) => {
            for (e, &bn) in p.exprs.iter().zip(b) {
                let (u, gu, hu) = e.eval_grad_hess(z, n);
                if !(u > T::zero()) || !u.is_finite() {
                    return None;
                }
                val -= bn * u.ln();
                let c1 = bn / u;
                let c2 = bn / (u * u);
                for v in 0..n {
                    g[v] -= c1 * gu[v];
                }
                for vi in 0..n {
                    if gu[vi] == T::zero() && hu[vi * n..(vi + 1) * n].iter().all(|&x| x == T::zero()) {
                        continue;
                    }
                    for vj in 0..n {
                        h[vi * n + vj] += c2 * gu[vi] * gu[vj] - c1 * hu[vi * n + vj];
                    }
                }
            }
        }
        Objective::WeightedSum(w) => {
            for (e, &wn) in p.exprs.iter().zip(w) {
                if wn == T::zero() {
                    continue;
                }
                let (u, gu, hu) = e.eval_grad_hess(z, n);
                if !u.is_finite() {
                    return None;
                }
                val -= wn * u;
                for v in 0..n {
                    g[v] -= wn * gu[v];
                }
                for (hv, huv) in h.iter_mut().zip(&hu) {
                    *hv -= wn * *huv;
                }
            }
        }
    }

    let xbar = p.aggregate_usage(z);
    for row in &p.rows {
        let s = p.slack(row, z, &xbar);
        if !(s > T::zero()) || !s.is_finite() {
            return None;
        }
        val -= mu * s.ln();
        let c1 = mu / s;
        let c2 = mu / (s * s);
        match row {
            Row::XNonNeg { var } | Row::TNonNeg { var } => {
                g[*var] -= c1;
                h[*var * n + *var] += c2;
            }
            Row::Epigraph { t, x, demand } => {
                // slack = z_x - d z_t
                g[*x] -= c1;
                g[*t] += c1 * *demand;
                h[*x * n + *x] += c2;
                h[*t * n + *t] += c2 * *demand * *demand;
                h[*x * n + *t] -= c2 * *demand;
                h[*t * n + *x] -= c2 * *demand;
            }
            Row::Capacity { vars, .. } => {
                for &vi in vars {
                    g[vi] += c1;
                    for &vj in vars {
                        h[vi * n + vj] += c2;
                    }
                }
            }
            Row::Energy { index } => {
                let c = &p.scenario.energy_constraints[*index];
                // ∇e over variables of scoped resources; ∇²e is diagonal per
                // resource but dense across agents sharing it.
                for &(r, beta) in &c.terms {
                    let q = beta * xbar[r.0].powf(beta - T::one());
                    for &vi in &p.resource_vars[r.0] {
                        g[vi] += c1 * q;
                    }
                }
                for &(ri, bi) in &c.terms {
                    let qi = bi * xbar[ri.0].powf(bi - T::one());
                    for &(rj, bj) in &c.terms {
                        let qj = bj * xbar[rj.0].powf(bj - T::one());
                        let coeff = c2 * qi * qj;
                        for &vi in &p.resource_vars[ri.0] {
                            for &vj in &p.resource_vars[rj.0] {
                                h[vi * n + vj] += coeff;
                            }
                        }
                    }
                    let curv = bi * (bi - T::one());
                    if curv > T::zero() {
                        let w = c1 * curv * xbar[ri.0].powf(bi - T::of(2.0));
                        for &vi in &p.resource_vars[ri.0] {
                            for &vj in &p.resource_vars[ri.0] {
                                h[vi * n + vj] += w;
                            }
                        }
                    }
                }
            }
        }
    }

    if val.is_finite() && g.iter().all(|x| x.is_finite()) && h.iter().all(|x| x.is_finite()) {
        Some((val, g, h))
    } else {
        None
    }
}

// Largest step keeping every linear row strictly feasible (energy rows are
// handled by backtracking on phi).
fn max_step<T: Real>(p: &EgProblem<T>, z: &[T], d: &[T]) -> T {
    let xbar = p.aggregate_usage(z);
    let mut alpha = T::one();
    let guard = T::of(0.99);
    for row in &p.rows {
        let (s, ds) = match row {
            Row::XNonNeg { var } | Row::TNonNeg { var } => (z[*var], d[*var]),
            Row::Epigraph { t, x, demand } => {
                (z[*x] - *demand * z[*t], d[*x] - *demand * d[*t])
            }
            Row::Capacity { cap, vars, .. } => (
                *cap - vars.iter().map(|&v| z[v]).sum::<T>(),
                -vars.iter().map(|&v| d[v]).sum::<T>(),
            ),
            Row::Energy { index } => {
                let c = &p.scenario.energy_constraints[*index];
                (c.limit - c.eval_raw(&xbar), T::zero())
            }
        };
        if ds < T::zero() {
            alpha = alpha.min(guard * s / (-ds));
        }
    }
    alpha
}

struct NewtonReport {
    steps: usize,
}

// Damped Newton on phi at fixed mu. `tight` demands a near-machine-precision
// gradient for the final stage; earlier stages settle for a modest decrement.
fn newton<T: Real>(
    p: &EgProblem<T>,
    z: &mut Vec<T>,
    mu: T,
    cfg: &SolverConfig<T>,
    tight: bool,
    gtol: T,
) -> Result<NewtonReport, String> {
    let n = p.n_vars;
    let mut steps = 0;
    for _ in 0..cfg.max_newton_steps {
        let Some((val, g, h)) = grad_hess(p, z, mu) else {
            return Err("barrier function undefined at iterate".into());
        };
        let grad_inf = g.iter().fold(T::zero(), |a, &x| a.max(x.abs()));
        if grad_inf <= gtol {
            break;
        }

        let diag_max = (0..n).fold(T::zero(), |a, i| a.max(h[i * n + i].abs()));
        let mut ridge = diag_max.max(T::one()) * T::epsilon() * T::of(4.0);
        let neg_g: Vec<T> = g.iter().map(|&x| -x).collect();
        let mut dir = None;
        for _ in 0..8 {
            if let Some(d) = solve_spd(n, &h, &neg_g, ridge) {
                dir = Some(d);
                break;
            }
            ridge = ridge * T::of(100.0);
        }
        let Some(d) = dir else {
            return Err("newton system singular beyond regularization".into());
        };

        let gd: T = g.iter().zip(&d).map(|(&a, &b)| a * b).sum();
        if !(gd < T::zero()) {
            break; // no descent left at this precision
        }
        let decrement = -gd * T::of(0.5);
        if !tight && decrement <= T::of(1e-12) * val.abs().max(T::one()) {
            break;
        }

        let mut alpha = max_step(p, z, &d).min(T::one());
        let armijo = T::of(1e-4);
        let mut accepted = false;
        for _ in 0..70 {
            let cand: Vec<T> = z.iter().zip(&d).map(|(&a, &b)| a + alpha * b).collect();
            if let Some(v) = phi(p, &cand, mu) {
                if v <= val + armijo * alpha * gd {
                    *z = cand;
                    accepted = true;
                    break;
                }
            }
            alpha = alpha * T::of(0.5);
        }
        steps += 1;
        if !accepted {
            break; // step stalled at numerical precision
        }
    }
    Ok(NewtonReport { steps })
}

/// Run the full barrier schedule on a problem.
pub(crate) fn minimize<T: Real>(p: &EgProblem<T>, cfg: &SolverConfig<T>) -> BarrierStatus<T> {
    let mut z = p.start.clone();
    let mu_stop = stop_mu(p, cfg);
    let mut mu = cfg.barrier_init_mu.max(mu_stop);
    let scale = problem_scale(p);
    // final-stage gradient tolerance: near machine precision, scale-aware
    let gtol_final = (T::of(1e-11) * scale).max(T::epsilon() * T::of(64.0) * scale);
    let gtol_path = T::of(1e-7) * scale;

    let mut outer = 0;
    let mut newton_total = 0;
    let mut objective_path = Vec::new();

    loop {
        outer += 1;
        let at_final = mu <= mu_stop;
        let gtol = if at_final { gtol_final } else { gtol_path };
        match newton(p, &mut z, mu, cfg, at_final, gtol) {
            Ok(rep) => newton_total += rep.steps,
            Err(msg) => return BarrierStatus::Failed(msg),
        }
        objective_path.push(true_objective(p, &z));
        if at_final {
            break;
        }
        if outer >= cfg.max_outer_iterations {
            let outcome = extract(p, &z, mu, outer, newton_total, objective_path);
            return BarrierStatus::OutOfIterations(outcome);
        }
        mu = (mu * cfg.barrier_reduction).max(mu_stop);
    }

    let outcome = extract(p, &z, mu, outer, newton_total, objective_path);
    BarrierStatus::Converged(outcome)
}

// Dual recovery and the stationarity refinement fit.
fn extract<T: Real>(
    p: &EgProblem<T>,
    z: &[T],
    mu: T,
    outer: usize,
    newton_steps: usize,
    objective_path: Vec<T>,
) -> BarrierOutcome<T> {
    let n = p.n_vars;
    let xbar = p.aggregate_usage(z);
    let n_res = p.scenario.n_resources();
    let n_energy = p.scenario.energy_constraints.len();

    // objective-side stationarity target c_v
    let mut c = vec![T::zero(); n];
    match &p.objective {
        Objective::BudgetLog(b) => {
            for (e, &bn) in p.exprs.iter().zip(b) {
                let (u, gu, _) = e.eval_grad_hess(z, n);
                for v in 0..n {
                    c[v] += bn / u * gu[v];
                }
            }
        }
        Objective::WeightedSum(w) => {
            for (e, &wn) in p.exprs.iter().zip(w) {
                if wn == T::zero() {
                    continue;
                }
                let (_, gu, _) = e.eval_grad_hess(z, n);
                for v in 0..n {
                    c[v] += wn * gu[v];
                }
            }
        }
    }

    // Columns of the stationarity system for every near-active constraint.
    // Signs follow ∇obj = Σ γ ∇(Σx) + Σ λ ∇e − Σ η ∇(x−dt) − ν − τ.
    enum Role {
        Gamma(usize),
        Lambda(usize),
        Other,
    }
    let sqrt_mu = mu.sqrt();
    let mut cols: Vec<Vec<(usize, T)>> = Vec::new();
    let mut col_role: Vec<Role> = Vec::new();
    for row in &p.rows {
        let s = p.slack(row, z, &xbar);
        match row {
            Row::Capacity { resource, cap, vars } => {
                if s <= sqrt_mu * (T::one() + *cap) {
                    cols.push(vars.iter().map(|&v| (v, T::one())).collect());
                    col_role.push(Role::Gamma(*resource));
                }
            }
            Row::Energy { index } => {
                let ec = &p.scenario.energy_constraints[*index];
                if s <= sqrt_mu * (T::one() + ec.limit) {
                    let mut col = Vec::new();
                    for &(r, beta) in &ec.terms {
                        let q = beta * xbar[r.0].powf(beta - T::one());
                        for &v in &p.resource_vars[r.0] {
                            col.push((v, q));
                        }
                    }
                    cols.push(col);
                    col_role.push(Role::Lambda(*index));
                }
            }
            Row::Epigraph { t, x, demand } => {
                if s <= sqrt_mu * (T::one() + z[*x].abs()) {
                    cols.push(vec![(*x, -T::one()), (*t, *demand)]);
                    col_role.push(Role::Other);
                }
            }
            Row::XNonNeg { var } | Row::TNonNeg { var } => {
                if z[*var] <= sqrt_mu {
                    cols.push(vec![(*var, -T::one())]);
                    col_role.push(Role::Other);
                }
            }
        }
    }

    let m = n;
    let ncols = cols.len();
    let mut a = vec![T::zero(); m * ncols];
    for (j, col) in cols.iter().enumerate() {
        for &(row, v) in col {
            a[row * ncols + j] = v;
        }
    }
    let w = nnls(m, ncols, &a, &c);

    let mut gamma = vec![T::zero(); n_res];
    let mut lambda = vec![T::zero(); n_energy];
    for (j, role) in col_role.iter().enumerate() {
        match role {
            Role::Gamma(k) => gamma[*k] = w[j],
            Role::Lambda(i) => lambda[*i] = w[j],
            Role::Other => {}
        }
    }

    let mut fit = vec![T::zero(); m];
    for (j, col) in cols.iter().enumerate() {
        for &(row, v) in col {
            fit[row] += v * w[j];
        }
    }
    let fit_residual = fit
        .iter()
        .zip(&c)
        .map(|(&f, &cv)| (f - cv).abs())
        .fold(T::zero(), T::max);

    BarrierOutcome {
        z: z.to_vec(),
        final_mu: mu,
        gamma,
        lambda,
        outer_iterations: outer,
        newton_steps,
        fit_residual,
        objective_path,
    }
}
