//! Allocation matrices and aggregate usage vectors.

use crate::scalar::Real;

/// Non-negative `N × K` matrix of resource quantities, row per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<T> {
    n_agents: usize,
    n_resources: usize,
    entries: Vec<T>,
}

impl<T: Real> Allocation<T> {
    pub fn zeros(n_agents: usize, n_resources: usize) -> Self {
        Allocation {
            n_agents,
            n_resources,
            entries: vec![T::zero(); n_agents * n_resources],
        }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let n_agents = rows.len();
        let n_resources = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_resources));
        Allocation {
            n_agents,
            n_resources,
            entries: rows.into_iter().flatten().collect(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_resources(&self) -> usize {
        self.n_resources
    }

    pub fn get(&self, agent: usize, resource: usize) -> T {
        self.entries[agent * self.n_resources + resource]
    }

    pub fn set(&mut self, agent: usize, resource: usize, v: T) {
        self.entries[agent * self.n_resources + resource] = v;
    }

    /// Bundle of one agent as a dense slice of length `K`.
    pub fn agent_bundle(&self, agent: usize) -> &[T] {
        &self.entries[agent * self.n_resources..(agent + 1) * self.n_resources]
    }

    /// Column sums `x̄_k = Σ_n x_nk`.
    pub fn aggregate(&self) -> AggregateUsage<T> {
        let mut values = vec![T::zero(); self.n_resources];
        for n in 0..self.n_agents {
            for (k, v) in values.iter_mut().enumerate() {
                *v += self.get(n, k);
            }
        }
        AggregateUsage { values }
    }
}

/// Total utilization per resource. Always derived from an [`Allocation`]
/// (or from raw solver variables), never stored independently.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateUsage<T> {
    values: Vec<T>,
}

impl<T: Real> AggregateUsage<T> {
    pub fn from_values(values: Vec<T>) -> Self {
        AggregateUsage { values }
    }

    pub fn get(&self, resource: usize) -> T {
        self.values[resource]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_sums_columns() {
        let a = Allocation::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(a.aggregate().as_slice(), &[4.0, 6.0]);
        assert_eq!(a.get(1, 0), 3.0);
        assert_eq!(a.agent_bundle(0), &[1.0, 2.0]);
    }
}
