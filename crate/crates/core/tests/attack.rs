mod common;

use common::{check_compliance, dense_adjacency, quick_config, reference_losses, six_node_fixtures, toggle};
use fairattack_core::attack::{run_attack, AttackState, Mode, StopReason, UtilityBudget};
use fairattack_core::fast::CandidateLimit;
use fairattack_core::sbm::{generate_sbm, SbmConfig};
use fairattack_core::{Graph, Pair};

fn sbm(n: usize, seed: u64) -> Graph {
    generate_sbm(&SbmConfig {
        n,
        seed,
        ..SbmConfig::default()
    })
    .unwrap()
}

#[test]
fn round_scores_match_recomputed_losses() {
    let mut r = common::rng(31);
    for g in six_node_fixtures(10, 30) {
        let theta = common::gaussian_vec(&mut r, g.feature_dim());
        let state = AttackState::new(&g, theta.clone()).unwrap();
        let mut a = dense_adjacency(&g);
        let cands: Vec<Pair> = (0..6)
            .flat_map(|u| (u + 1..6).map(move |v| Pair { u, v }))
            .filter(|p| common::keeps_no_singletons(&a, *p))
            .collect();
        let round = state.score_candidates(&cands, true).unwrap();
        let (l, lf) = reference_losses(&g, &a, &theta);
        assert!((state.loss() - l).abs() <= 1e-10);
        assert!((state.objective() - lf).abs() <= 1e-10);
        for (k, &p) in cands.iter().enumerate() {
            toggle(&mut a, p);
            let (l1, lf1) = reference_losses(&g, &a, &theta);
            toggle(&mut a, p);
            assert!((round.p[k] - (l1 - l)).abs() <= 1e-10, "ΔL for {p:?}");
            assert!((round.q[k] - (lf1 - lf)).abs() <= 1e-10, "ΔL_f for {p:?}");
        }
    }
}

#[test]
fn evasion_and_poisoning_runs_stay_feasible() {
    let g = sbm(150, 2);
    for mode in [Mode::Evasion, Mode::Poisoning] {
        for eps in [UtilityBudget::Relative(0.05), UtilityBudget::Absolute(1e-3)] {
            let cfg = fairattack_core::attack::AttackConfig {
                mode,
                utility_budget: eps,
                retrain_epochs: 20,
                ..quick_config(12)
            };
            let out = run_attack(&g, &cfg).unwrap();
            check_compliance(&g, &out).unwrap();
            assert_eq!(out.trace.len(), out.flips.len());
            assert!(out.final_objective() >= out.clean_objective || mode == Mode::Poisoning);
        }
    }
}

#[test]
fn tight_utility_budget_stops_the_attack() {
    let g = sbm(120, 5);
    let cfg = fairattack_core::attack::AttackConfig {
        utility_budget: UtilityBudget::Absolute(0.0),
        ..quick_config(10)
    };
    let out = run_attack(&g, &cfg).unwrap();
    check_compliance(&g, &out).unwrap();
    assert!(out.flips.is_empty(), "{} flips under a zero budget", out.flips.len());
    assert!(matches!(
        out.stop,
        StopReason::UtilityBudget | StopReason::NoImprovement
    ));
}

#[test]
fn attacks_are_deterministic_and_traced() {
    let g = sbm(100, 6);
    let cfg = fairattack_core::attack::AttackConfig {
        candidates: CandidateLimit::Fraction(0.05),
        ..quick_config(8)
    };
    let a = run_attack(&g, &cfg).unwrap();
    let b = run_attack(&g, &cfg).unwrap();
    assert_eq!(a.flips, b.flips);
    assert_eq!(a.trace_csv(), b.trace_csv());
    let mut lf = a.clean_objective;
    for (t, r) in a.trace.iter().enumerate() {
        assert_eq!(r.t, t);
        assert!((r.lf - (lf + r.delta_lf)).abs() <= 1e-9);
        lf = r.lf;
    }
    check_compliance(&g, &a).unwrap();
}
