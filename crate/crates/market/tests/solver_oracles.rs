//! Solver checks against independently derived optima: closed forms verified
//! by brute-force grids, and a one-dimensional KKT instance solved by
//! bisection.

use approx::assert_relative_eq;
use market::{
    best_response, brute_force_optimum, build_problem, certify, eval_utility, solve,
    solve_social_optimum, Agent, Capacity, Config64, EnergyConstraint, MarketScenario, Resource,
    ResourceId, UtilitySpec,
};

fn rid(i: usize) -> ResourceId {
    ResourceId(i)
}

fn cobb_douglas_2x2() -> MarketScenario<f64> {
    MarketScenario {
        agents: vec![
            Agent {
                name: "a1".into(),
                budget: 1.0,
                utility: UtilitySpec::CobbDouglas {
                    weights: vec![(rid(0), 0.75), (rid(1), 0.25)],
                },
            },
            Agent {
                name: "a2".into(),
                budget: 1.0,
                utility: UtilitySpec::CobbDouglas {
                    weights: vec![(rid(0), 0.25), (rid(1), 0.75)],
                },
            },
        ],
        resources: vec![
            Resource { name: "r0".into(), capacity: Capacity::Bounded(1.0) },
            Resource { name: "r1".into(), capacity: Capacity::Bounded(1.0) },
        ],
        energy_constraints: vec![],
    }
}

fn leontief_single_resource() -> MarketScenario<f64> {
    MarketScenario {
        agents: vec![
            Agent {
                name: "a".into(),
                budget: 2.0,
                utility: UtilitySpec::Leontief { demands: vec![(rid(0), 1.0)] },
            },
            Agent {
                name: "b".into(),
                budget: 3.0,
                utility: UtilitySpec::Leontief { demands: vec![(rid(0), 1.0)] },
            },
        ],
        resources: vec![Resource { name: "r".into(), capacity: Capacity::Bounded(10.0) }],
        energy_constraints: vec![],
    }
}

fn energy_only_one_agent() -> MarketScenario<f64> {
    MarketScenario {
        agents: vec![Agent {
            name: "solo".into(),
            budget: 1.0,
            utility: UtilitySpec::Linear { weights: vec![(rid(0), 1.0)] },
        }],
        resources: vec![Resource { name: "r".into(), capacity: Capacity::Unbounded }],
        energy_constraints: vec![EnergyConstraint {
            label: "quad".into(),
            terms: vec![(rid(0), 2.0)],
            limit: 4.0,
        }],
    }
}

#[test]
fn cobb_douglas_fisher_closed_form() {
    let s = cobb_douglas_2x2();
    // The closed form p_k = Σ_n B_n a_nk, x_nk = B_n a_nk / p_k is first
    // confirmed by the grid oracle before being trusted.
    let (grid_alloc, grid_welfare) = brute_force_optimum(&s, 0.005).unwrap();
    assert_relative_eq!(grid_alloc.get(0, 0), 0.75, epsilon = 0.011);
    assert_relative_eq!(grid_alloc.get(1, 1), 0.75, epsilon = 0.011);

    let p = build_problem(&s).unwrap();
    let r = solve(&p, &Config64::default()).unwrap();
    assert_relative_eq!(r.prices[0], 1.0, epsilon = 1e-6);
    assert_relative_eq!(r.prices[1], 1.0, epsilon = 1e-6);
    assert_relative_eq!(r.allocation.get(0, 0), 0.75, epsilon = 1e-6);
    assert_relative_eq!(r.allocation.get(0, 1), 0.25, epsilon = 1e-6);
    assert_relative_eq!(r.allocation.get(1, 0), 0.25, epsilon = 1e-6);
    assert_relative_eq!(r.allocation.get(1, 1), 0.75, epsilon = 1e-6);
    assert!(r.objective >= grid_welfare - 0.05);

    let cert = certify(&s, &r, 1e-4);
    assert!(cert.pass, "{cert:?}");
}

#[test]
fn leontief_budget_proportional_split() {
    let s = leontief_single_resource();
    let (grid_alloc, _) = brute_force_optimum(&s, 0.01).unwrap();
    assert_relative_eq!(grid_alloc.get(0, 0), 4.0, epsilon = 0.02);

    let p = build_problem(&s).unwrap();
    let r = solve(&p, &Config64::default()).unwrap();
    assert_relative_eq!(r.allocation.get(0, 0), 4.0, epsilon = 1e-5);
    assert_relative_eq!(r.allocation.get(1, 0), 6.0, epsilon = 1e-5);
    assert_relative_eq!(r.prices[0], 0.5, epsilon = 1e-6);
    let cert = certify(&s, &r, 1e-4);
    assert!(cert.pass, "{cert:?}");
}

#[test]
fn hand_kkt_energy_instance() {
    // max log(x) s.t. x² ≤ 4. Bisection on the stationarity condition
    // B/x = λ·2x with λ = feasibility multiplier: optimum is the boundary
    // point x = 2 because the objective is increasing.
    let oracle = {
        let (mut lo, mut hi) = (0.0f64, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid <= 4.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    assert_relative_eq!(oracle, 2.0, epsilon = 1e-12);

    let s = energy_only_one_agent();
    let p = build_problem(&s).unwrap();
    let r = solve(&p, &Config64::default()).unwrap();
    assert_relative_eq!(r.allocation.get(0, 0), 2.0, epsilon = 1e-5);
    // λ = B/(2x²) = 0.125, p = λ·∇e = 0.125·4 = 0.5, spending = 1 = B
    assert_relative_eq!(r.energy_duals[0], 0.125, epsilon = 1e-5);
    assert_relative_eq!(r.prices[0], 0.5, epsilon = 1e-5);
    let spending = r.prices[0] * r.allocation.get(0, 0);
    assert_relative_eq!(spending, 1.0, epsilon = 1e-5);
    assert_eq!(r.capacity_duals[0], 0.0);

    let cert = certify(&s, &r, 1e-4);
    assert!(cert.pass, "{cert:?}");
}

#[test]
fn objective_path_is_monotone() {
    for s in [cobb_douglas_2x2(), leontief_single_resource(), energy_only_one_agent()] {
        let p = build_problem(&s).unwrap();
        let r = solve(&p, &Config64::default()).unwrap();
        for w in r.stats.objective_path.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "objective regressed: {:?}", w);
        }
    }
}

#[test]
fn deterministic_bitwise_across_runs() {
    let s = cobb_douglas_2x2();
    let p1 = build_problem(&s).unwrap();
    let r1 = solve(&p1, &Config64::default()).unwrap();
    let p2 = build_problem(&s).unwrap();
    let r2 = solve(&p2, &Config64::default()).unwrap();
    for n in 0..2 {
        for k in 0..2 {
            assert_eq!(r1.allocation.get(n, k).to_bits(), r2.allocation.get(n, k).to_bits());
        }
    }
    for k in 0..2 {
        assert_eq!(r1.prices[k].to_bits(), r2.prices[k].to_bits());
    }
}

#[test]
fn budget_scale_equivariance() {
    let base = leontief_single_resource();
    let p = build_problem(&base).unwrap();
    let r = solve(&p, &Config64::default()).unwrap();

    let mut scaled = base.clone();
    for a in scaled.agents.iter_mut() {
        a.budget *= 7.0;
    }
    let p7 = build_problem(&scaled).unwrap();
    let r7 = solve(&p7, &Config64::default()).unwrap();

    for n in 0..2 {
        assert_relative_eq!(r7.allocation.get(n, 0), r.allocation.get(n, 0), epsilon = 1e-5);
        assert_relative_eq!(r7.utilities[n], r.utilities[n], epsilon = 1e-5);
    }
    assert_relative_eq!(r7.prices[0], 7.0 * r.prices[0], max_relative = 1e-5);
    assert_relative_eq!(
        r7.capacity_duals[0],
        7.0 * r.capacity_duals[0],
        max_relative = 1e-5
    );
}

#[test]
fn social_optimum_dominates_equilibrium_total() {
    let s = cobb_douglas_2x2();
    let p = build_problem(&s).unwrap();
    let me = solve(&p, &Config64::default()).unwrap();
    let weights: Vec<f64> = s.agents.iter().map(|a| a.budget).collect();
    let so = solve_social_optimum(&s, &weights, &Config64::default()).unwrap();
    let me_total: f64 = me
        .utilities
        .iter()
        .zip(&weights)
        .map(|(&u, &w)| w * u)
        .sum();
    assert!(so.objective >= me_total - 1e-6, "{} vs {me_total}", so.objective);
}

#[test]
fn social_optimum_with_zero_weight_starves_that_agent() {
    let s = leontief_single_resource();
    let so = solve_social_optimum(&s, &[1.0, 0.0], &Config64::default()).unwrap();
    // all capacity should flow to the weighted agent
    assert_relative_eq!(so.utilities[0], 10.0, epsilon = 1e-4);
    assert!(so.utilities[1] < 1e-4, "{}", so.utilities[1]);
}

#[test]
fn perturbed_prices_fail_certification() {
    let s = cobb_douglas_2x2();
    let p = build_problem(&s).unwrap();
    let mut r = solve(&p, &Config64::default()).unwrap();
    r.prices[0] *= 1.10;
    let cert = certify(&s, &r, 1e-4);
    assert!(!cert.pass);
    let worst_gap = cert.c1_gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let worst_budget = cert
        .budget_residuals
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(worst_gap > 1e-4 || worst_budget > 1e-4);
}

#[test]
fn best_response_agrees_with_solver_utilities() {
    let s = cobb_douglas_2x2();
    let p = build_problem(&s).unwrap();
    let r = solve(&p, &Config64::default()).unwrap();
    for (n, agent) in s.agents.iter().enumerate() {
        let br = best_response(agent, &r.prices, 1e-9).unwrap();
        let u = eval_utility(&agent.utility, r.allocation.agent_bundle(n));
        assert_relative_eq!(br.utility, u, max_relative = 1e-5);
    }
}
