//! Market scenarios: agents, resources and regulatory constraints, plus
//! structural validation.

use crate::energy::EnergyConstraint;
use crate::scalar::Real;
use crate::utility::UtilitySpec;
use std::collections::BTreeSet;
use std::fmt;

/// Index into a scenario's resource list. Indices are dense `0..K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResourceId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capacity<T> {
    Bounded(T),
    /// No capacity row; the resource is limited only through energy
    /// constraints (think cloud-scale resources).
    Unbounded,
}

impl<T: Real> Capacity<T> {
    pub fn bound(&self) -> Option<T> {
        match self {
            Capacity::Bounded(c) => Some(*c),
            Capacity::Unbounded => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resource<T> {
    pub name: String,
    pub capacity: Capacity<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent<T> {
    pub name: String,
    /// Budget of artificial currency (carbon credits); strictly positive.
    pub budget: T,
    pub utility: UtilitySpec<T>,
}

/// The full market: who wants what, what is scarce, and which aggregate
/// energy budgets apply. Prices are an output of the solver, not a field.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketScenario<T> {
    pub agents: Vec<Agent<T>>,
    pub resources: Vec<Resource<T>>,
    pub energy_constraints: Vec<EnergyConstraint<T>>,
}

impl<T: Real> MarketScenario<T> {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_resources(&self) -> usize {
        self.resources.len()
    }

    pub fn resource_id(&self, name: &str) -> Option<ResourceId> {
        self.resources.iter().position(|r| r.name == name).map(ResourceId)
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.name == name)
    }

    /// Resources referenced by at least one utility tree.
    pub fn valued_resources(&self) -> BTreeSet<ResourceId> {
        let mut out = BTreeSet::new();
        for a in &self.agents {
            out.extend(a.utility.scoped_resources());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Where in the scenario the problem sits, e.g. `agents[0].budget`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Outcome of [`validate_scenario`]; empty `violations` means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Non-fatal notes, e.g. Cobb-Douglas weights that were not normalized.
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn violation(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            write!(f, "valid")?;
        } else {
            for v in &self.violations {
                writeln!(f, "{v}")?;
            }
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Check every structural invariant of a scenario and report all violations.
pub fn validate_scenario<T: Real>(s: &MarketScenario<T>) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let n_res = s.resources.len();

    if s.agents.is_empty() {
        rep.violation("agents", "at least one agent required");
    }
    if s.resources.is_empty() {
        rep.violation("resources", "at least one resource required");
    }

    let mut seen = BTreeSet::new();
    for (k, r) in s.resources.iter().enumerate() {
        let path = format!("resources[{k}]");
        if r.name.is_empty() {
            rep.violation(format!("{path}.name"), "name must be non-empty");
        }
        if !seen.insert(r.name.clone()) {
            rep.violation(format!("{path}.name"), format!("duplicate name \"{}\"", r.name));
        }
        if let Capacity::Bounded(c) = r.capacity {
            if !(c > T::zero()) || !c.is_finite() {
                rep.violation(format!("{path}.capacity"), "capacity must satisfy capacity > 0");
            }
        }
    }

    for (n, a) in s.agents.iter().enumerate() {
        let path = format!("agents[{n}]");
        if !(a.budget > T::zero()) || !a.budget.is_finite() {
            rep.violation(format!("{path}.budget"), "budget must satisfy budget > 0");
        }
        validate_utility(&a.utility, n_res, &format!("{path}.utility"), &mut rep);
    }

    for (i, c) in s.energy_constraints.iter().enumerate() {
        let path = format!("energy_constraints[{i}]");
        if c.terms.is_empty() {
            rep.violation(format!("{path}.scope"), "scope must be non-empty");
        }
        if !(c.limit > T::zero()) || !c.limit.is_finite() {
            rep.violation(format!("{path}.limit"), "limit must satisfy limit > 0");
        }
        let mut scoped = BTreeSet::new();
        for &(r, beta) in &c.terms {
            if r.0 >= n_res {
                rep.violation(format!("{path}.scope"), format!("unknown resource index {}", r.0));
            }
            if !(beta >= T::one()) || !beta.is_finite() {
                rep.violation(
                    format!("{path}.exponents[{}]", r.0),
                    "exponent must satisfy beta >= 1",
                );
            }
            if !scoped.insert(r) {
                rep.violation(format!("{path}.scope"), format!("resource {} listed twice", r.0));
            }
        }
    }

    // Every valued resource needs a capacity bound or an energy constraint,
    // otherwise the equilibrium program can be unbounded.
    let mut covered = BTreeSet::new();
    for (k, r) in s.resources.iter().enumerate() {
        if matches!(r.capacity, Capacity::Bounded(_)) {
            covered.insert(ResourceId(k));
        }
    }
    for c in &s.energy_constraints {
        covered.extend(c.scope());
    }
    for r in s.valued_resources() {
        if r.0 < n_res && !covered.contains(&r) {
            rep.violation(
                format!("resources[{}]", r.0),
                format!(
                    "resource \"{}\" is wanted by some agent but has neither a capacity bound nor an energy constraint",
                    s.resources[r.0].name
                ),
            );
        }
    }

    rep
}

fn validate_utility<T: Real>(
    u: &UtilitySpec<T>,
    n_res: usize,
    path: &str,
    rep: &mut ValidationReport,
) {
    let check_terms = |terms: &[(ResourceId, T)], rep: &mut ValidationReport| {
        if terms.is_empty() {
            rep.violation(path.to_string(), "leaf must reference at least one resource");
        }
        for &(r, w) in terms {
            if r.0 >= n_res {
                rep.violation(path.to_string(), format!("unknown resource index {}", r.0));
            }
            if !(w > T::zero()) || !w.is_finite() {
                rep.violation(path.to_string(), "weights must be positive and finite");
            }
        }
    };
    let check_rho = |rho: T, rep: &mut ValidationReport| {
        if !rho.is_finite() || rho == T::zero() || rho > T::one() {
            rep.violation(path.to_string(), "rho must lie in (-inf, 0) or (0, 1]");
        }
    };
    match u {
        UtilitySpec::Linear { weights } => check_terms(weights, rep),
        UtilitySpec::Leontief { demands } => check_terms(demands, rep),
        UtilitySpec::CobbDouglas { weights } => {
            check_terms(weights, rep);
            let total: T = weights.iter().map(|&(_, w)| w).sum();
            if (total - T::one()).abs() > T::of(1e-9) {
                rep.warnings.push(format!(
                    "{path}: Cobb-Douglas weights sum to {total}; normalizing to 1 for evaluation"
                ));
            }
        }
        UtilitySpec::Ces { rho, weights } => {
            check_rho(*rho, rep);
            check_terms(weights, rep);
        }
        UtilitySpec::Nest { rho, children } => {
            check_rho(*rho, rep);
            if children.is_empty() {
                rep.violation(path.to_string(), "nest must have at least one child");
            }
            for (i, (w, c)) in children.iter().enumerate() {
                if !(*w > T::zero()) || !w.is_finite() {
                    rep.violation(
                        format!("{path}.children[{i}]"),
                        "child weight must be positive and finite",
                    );
                }
                validate_utility(c, n_res, &format!("{path}.children[{i}]"), rep);
            }
        }
    }
}
