//! Seed-driven generators for the randomized property suites. Everything is
//! driven by a caller-supplied `Rng`, so tests stay reproducible by seeding.

use crate::energy::EnergyConstraint;
use crate::scenario::{Agent, Capacity, MarketScenario, Resource, ResourceId};
use crate::utility::UtilitySpec;
use rand::Rng;

pub fn random_bundle<R: Rng>(rng: &mut R, k: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..k).map(|_| rng.gen_range(lo..hi)).collect()
}

fn random_terms<R: Rng>(rng: &mut R, n_res: usize) -> Vec<(ResourceId, f64)> {
    let count = rng.gen_range(1..=n_res.min(4));
    let mut picks: Vec<usize> = (0..n_res).collect();
    for i in 0..count {
        let j = rng.gen_range(i..n_res);
        picks.swap(i, j);
    }
    let mut terms: Vec<(ResourceId, f64)> = picks[..count]
        .iter()
        .map(|&k| (ResourceId(k), rng.gen_range(0.2..3.0)))
        .collect();
    terms.sort_by_key(|(r, _)| r.0);
    terms
}

fn random_rho<R: Rng>(rng: &mut R) -> f64 {
    if rng.gen_bool(0.5) {
        rng.gen_range(0.2..=1.0)
    } else {
        rng.gen_range(-4.0..-0.2)
    }
}

/// Random utility tree without Leontief leaves (smooth on the interior).
pub fn random_smooth_tree<R: Rng>(rng: &mut R, n_res: usize, depth: usize) -> UtilitySpec<f64> {
    if depth == 0 || rng.gen_bool(0.6) {
        match rng.gen_range(0..3) {
            0 => UtilitySpec::Linear { weights: random_terms(rng, n_res) },
            1 => UtilitySpec::CobbDouglas { weights: random_terms(rng, n_res) },
            _ => UtilitySpec::Ces { rho: random_rho(rng), weights: random_terms(rng, n_res) },
        }
    } else {
        let n_children = rng.gen_range(2..=3);
        UtilitySpec::Nest {
            rho: random_rho(rng),
            children: (0..n_children)
                .map(|_| (rng.gen_range(0.3..2.0), random_smooth_tree(rng, n_res, depth - 1)))
                .collect(),
        }
    }
}

/// Random utility tree from the full family, Leontief included.
pub fn random_tree<R: Rng>(rng: &mut R, n_res: usize, depth: usize) -> UtilitySpec<f64> {
    if depth == 0 || rng.gen_bool(0.55) {
        match rng.gen_range(0..4) {
            0 => UtilitySpec::Linear { weights: random_terms(rng, n_res) },
            1 => UtilitySpec::CobbDouglas { weights: random_terms(rng, n_res) },
            2 => UtilitySpec::Leontief { demands: random_terms(rng, n_res) },
            _ => UtilitySpec::Ces { rho: random_rho(rng), weights: random_terms(rng, n_res) },
        }
    } else {
        let n_children = rng.gen_range(2..=3);
        UtilitySpec::Nest {
            rho: random_rho(rng),
            children: (0..n_children)
                .map(|_| (rng.gen_range(0.3..2.0), random_tree(rng, n_res, depth - 1)))
                .collect(),
        }
    }
}

/// Small random scenario that is valid by construction: every resource is
/// capacity-bounded, optional energy constraints on top.
pub fn random_scenario<R: Rng>(rng: &mut R) -> MarketScenario<f64> {
    let n_res = rng.gen_range(1..=3);
    let n_agents = rng.gen_range(1..=3);
    let resources = (0..n_res)
        .map(|k| Resource {
            name: format!("r{k}"),
            capacity: Capacity::Bounded(rng.gen_range(0.5..20.0)),
        })
        .collect();
    let agents = (0..n_agents)
        .map(|n| Agent {
            name: format!("a{n}"),
            budget: rng.gen_range(0.2..4.0),
            utility: random_tree(rng, n_res, 1),
        })
        .collect();
    let mut energy_constraints = Vec::new();
    if rng.gen_bool(0.5) {
        let terms: Vec<(ResourceId, f64)> = (0..n_res)
            .filter(|_| rng.gen_bool(0.7))
            .map(|k| (ResourceId(k), rng.gen_range(1.0..3.0)))
            .collect();
        if !terms.is_empty() {
            energy_constraints.push(EnergyConstraint {
                label: "e0".into(),
                terms,
                limit: rng.gen_range(1.0..30.0),
            });
        }
    }
    MarketScenario { agents, resources, energy_constraints }
}
