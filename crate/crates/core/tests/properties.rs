use decbandit::agent::{AgentState, Broadcast, Policy};
use decbandit::analysis::{f2, f2_floor};
use decbandit::checks::CheckStatus;
use decbandit::engine::{run, SimConfig};
use decbandit::graph::{metropolis_weights, NeighborGraph};
use decbandit::klcore::{kl_div, kl_ucb_solve, ucb1_bonus, ConfidenceParams};
use decbandit::oracle::{check_concentration, track, verify_trace, OracleOptions};
use decbandit::rewards::{ArmSet, ArmSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph_from_mask(n: usize, mask: &[bool]) -> NeighborGraph {
    let mut pairs = Vec::new();
    let mut idx = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if mask[idx % mask.len()] {
                pairs.push((i, j));
            }
            idx += 1;
        }
    }
    NeighborGraph::new(n, pairs).unwrap()
}

/// Connected graph: a random spanning tree plus random extra edges.
fn connected_graph() -> impl Strategy<Value = NeighborGraph> {
    (2usize..=8).prop_flat_map(|n| {
        (Just(n), prop::collection::vec(any::<prop::sample::Index>(), n - 1), prop::collection::vec(any::<bool>(), 28))
            .prop_map(|(n, parents, extra)| {
                let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (parents[i - 1].index(i), i)).collect();
                let mut idx = 0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        if extra[idx % extra.len()] && !pairs.contains(&(i, j)) {
                            pairs.push((i, j));
                        }
                        idx += 1;
                    }
                }
                NeighborGraph::new(n, pairs).unwrap()
            })
    })
}

fn any_graph() -> impl Strategy<Value = NeighborGraph> {
    (1usize..=10, prop::collection::vec(any::<bool>(), 45)).prop_map(|(n, mask)| graph_from_mask(n, &mask))
}

fn bernoulli_arms() -> impl Strategy<Value = ArmSet> {
    prop::collection::vec(0.0f64..=1.0, 2..=5)
        .prop_map(|means| ArmSet::new(means.into_iter().map(|m| ArmSpec::bernoulli(m).unwrap()).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weight_matrix_is_symmetric_stochastic(g in any_graph()) {
        let w = metropolis_weights(&g);
        let n = g.node_count();
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let v = w.get(i, j);
                prop_assert!(v >= 0.0 && v <= 1.0);
                prop_assert!((v - w.get(j, i)).abs() <= 1e-15);
                if i != j && !g.has_edge(i, j) {
                    prop_assert_eq!(v, 0.0);
                }
                row += v;
            }
            prop_assert!((row - 1.0).abs() <= 1e-12);
        }
        prop_assert!((0.0..=1.0 + 1e-12).contains(&w.rho2()));
    }

    #[test]
    fn connected_graphs_mix(g in connected_graph()) {
        let w = metropolis_weights(&g);
        prop_assert!(w.rho2() < 1.0);
        prop_assert!(w.consensus_decay_excess(30) <= 1e-10);
    }

    #[test]
    fn distances_are_a_metric(g in any_graph()) {
        let d = g.shortest_distances();
        let n = g.node_count();
        for i in 0..n {
            prop_assert_eq!(d.get(i, i), Some(0));
            for j in 0..n {
                prop_assert_eq!(d.get(i, j), d.get(j, i));
                if let Some(dij) = d.get(i, j) {
                    prop_assert!(dij <= n);
                    for k in 0..n {
                        if let (Some(a), Some(b)) = (d.get(i, k), d.get(k, j)) {
                            prop_assert!(dij <= a + b);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn kl_is_zero_on_diagonal_and_increasing(p in 0.0f64..1.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        prop_assert_eq!(kl_div(p, p).unwrap(), 0.0);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let q1 = p + (1.0 - p) * lo;
        let q2 = p + (1.0 - p) * hi;
        if q2 - q1 > 1e-9 && q2 < 1.0 {
            prop_assert!(kl_div(p, q1).unwrap() < kl_div(p, q2).unwrap());
        }
    }

    #[test]
    fn kl_solve_inverts_budget(z in 0.0f64..0.99, n in 1u64..200, budget in 1e-4f64..5.0) {
        let q = kl_ucb_solve(z, n, budget);
        prop_assert!(q >= z && q <= 1.0);
        if q < 1.0 - 1e-8 {
            // slope of n d(z; .) on [q, q + 1e-9] bounds the bisection error
            let slope = n as f64 * (q - z) / (q * (1.0 - q)).max(1e-300);
            let lhs = (n as f64 * kl_div(z, q).unwrap() - budget).abs();
            prop_assert!(lhs <= 1e-7 + slope * 1e-9, "lhs {lhs} slope {slope}");
        }
    }

    #[test]
    fn kl_solve_is_monotone(z in 0.0f64..1.0, n1 in 1u64..100, dn in 0u64..100, q1 in 0.0f64..3.0, dq in 0.0f64..3.0) {
        prop_assert!(kl_ucb_solve(z, n1, q1) <= kl_ucb_solve(z, n1, q1 + dq));
        prop_assert!(kl_ucb_solve(z, n1, q1) >= kl_ucb_solve(z, n1 + dn, q1));
    }

    #[test]
    fn ucb1_bonus_monotonicity(t in 1.0f64..1e6, dt in 0.0f64..1e6, n in 1u64..1000, nb in 1usize..30, beta in 0.0f64..2.0) {
        let p = ConfidenceParams::new(0.0, beta, nb).unwrap();
        let wider = ConfidenceParams::new(0.0, beta, nb + 1).unwrap();
        for single in [false, true] {
            prop_assert!(ucb1_bonus(t, n + 1, &p, single) <= ucb1_bonus(t, n, &p, single));
            prop_assert!(ucb1_bonus(t, n, &p, single) <= ucb1_bonus(t + dt, n, &p, single));
        }
        prop_assert!(ucb1_bonus(t, n, &wider, false) <= ucb1_bonus(t, n, &p, false));
    }

    #[test]
    fn f2_never_below_floor(eps in 0.05f64..10.0, rho in 0.0f64..0.7, n in 1usize..6, m in 1usize..6) {
        prop_assert!(f2(eps, rho, n, m).unwrap() >= f2_floor(n, m));
    }

    #[test]
    fn single_agent_decisions_ignore_inbox(
        init in prop::collection::vec(0.0f64..=1.0, 2..5),
        junk in prop::collection::vec(-5.0f64..5.0, 4),
        t in 0u64..500,
        kl in any::<bool>(),
    ) {
        let m = init.len();
        let policy = if kl { Policy::SingleKlucb } else { Policy::SingleUcb1 };
        let params = ConfidenceParams::new(0.3, 0.3, 2).unwrap();
        let mut a = AgentState::init(0, policy, params, &init).unwrap();
        let mut b = a.clone();
        let row = [(0usize, 0.5), (1usize, 0.5)];
        let neighbor = |z: Vec<f64>, mm: u64| Broadcast { sender: 1, m_vec: vec![mm; m], z_vec: z };
        let quiet = neighbor(init.clone(), 1);
        let loud = neighbor((0..m).map(|k| junk[k % junk.len()]).collect(), 50);
        let (sa, sb) = (a.broadcast(), b.broadcast());
        a.update(0, 0.4, &row, &[&sa, &quiet]).unwrap();
        b.update(0, 0.4, &row, &[&sb, &loud]).unwrap();
        let mut ra = ChaCha8Rng::seed_from_u64(t);
        let mut rb = ChaCha8Rng::seed_from_u64(t);
        prop_assert_eq!(a.decide(t, &mut ra), b.decide(t, &mut rb));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn engine_invariants_hold(
        g in connected_graph(),
        arms in bernoulli_arms(),
        kl in any::<bool>(),
        param in 0.0f64..1.5,
        seed in any::<u64>(),
        horizon in 20u64..150,
    ) {
        let policy = if kl { Policy::DecKlucb } else { Policy::DecUcb1 };
        let mut cfg = SimConfig::uniform(g, arms, policy, param, horizon);
        cfg.master_seed = seed;
        cfg.invariant_checks = true;
        let result = run(&cfg, 0).unwrap();
        let report = result.invariants.unwrap();
        prop_assert!(report.all_passed(), "{}", report);
        for c in &report.checks {
            prop_assert!(c.status != CheckStatus::Fail);
        }
        for traj in &result.regret {
            prop_assert!(traj.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn ledger_reconstructs_consensus(
        g in connected_graph(),
        arms in bernoulli_arms(),
        kl in any::<bool>(),
        seed in any::<u64>(),
        horizon in 5u64..60,
    ) {
        let policy = if kl { Policy::DecKlucb } else { Policy::DecUcb1 };
        let mut cfg = SimConfig::uniform(g, arms, policy, 0.1, horizon);
        cfg.master_seed = seed;
        cfg.oracle_tracking = true;
        let result = run(&cfg, 0).unwrap();
        let trace = result.trace.unwrap();
        let w = metropolis_weights(&cfg.graph);
        let f2_value = f2(1.0, w.rho2(), cfg.agent_count(), cfg.arms.len()).unwrap();
        let opts = OracleOptions { f2: Some(f2_value), ..OracleOptions::default() };
        let report = verify_trace(&trace, &opts).unwrap();
        prop_assert!(report.all_passed(), "{}", report);

        // coefficients vanish for (j, τ) where j did not pull k
        let ledger = track(&trace, false).unwrap();
        let last = ledger.at(ledger.horizon());
        for i in 0..cfg.agent_count() {
            for k in 0..cfg.arms.len() {
                for j in 0..cfg.agent_count() {
                    for tau in 0..=ledger.horizon() {
                        let pulled = last.pull_times[j][k].contains(&tau);
                        if !pulled {
                            prop_assert_eq!(last.coefficient(i, k, j, tau), 0.0);
                        }
                    }
                }
            }
        }
        let init_scope = check_concentration(&ledger, 1.0, f2_value).initialization;
        prop_assert!(init_scope.passed());
    }
}
