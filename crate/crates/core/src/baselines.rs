//! Reference attackers: uniform random flips, FA-GNN style DD injection, and
//! the greedy attack without the utility constraint.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::attack::{run_attack, AttackConfig, AttackOutcome, UtilityBudget};
use crate::error::{Error, Result};
use crate::graph::{EdgeFlip, EdgeGroup, FlipKind, Graph, Pair};
use crate::rng;

/// A perturbed graph with the flips that produced it, in order.
#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub graph: Graph,
    pub flips: Vec<EdgeFlip>,
}

/// Flips `budget` distinct pairs drawn uniformly among those feasible at each
/// step.
pub fn random_attack(graph: &Graph, budget: usize, seed: u64) -> Result<BaselineOutcome> {
    let n = graph.node_count();
    let mut r = rng::stream(seed, "random-attack");
    let mut adj = graph.adjacency().clone();
    let mut used: HashSet<Pair> = HashSet::new();
    let mut flips = Vec::with_capacity(budget);
    let max_tries = 64 * n * n.max(1);
    'flips: for t in 0..budget {
        for _ in 0..max_tries {
            let a = r.gen_range(0..n);
            let b = r.gen_range(0..n);
            let Some(pair) = Pair::new(a, b) else { continue };
            if used.contains(&pair) || !adj.flip_keeps_no_singletons(pair) {
                continue;
            }
            let kind = adj.toggle(pair);
            used.insert(pair);
            flips.push(EdgeFlip {
                u: pair.u,
                v: pair.v,
                kind,
                iteration: t,
            });
            continue 'flips;
        }
        // Rejection sampling stalled: fall back to the explicit feasible set.
        let mut rest: Vec<Pair> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| Pair { u, v }))
            .filter(|p| !used.contains(p) && adj.flip_keeps_no_singletons(*p))
            .collect();
        if rest.is_empty() {
            return Err(Error::InsufficientFlips {
                requested: budget,
                available: t,
            });
        }
        rest.sort();
        let pair = rest[r.gen_range(0..rest.len())];
        let kind = adj.toggle(pair);
        used.insert(pair);
        flips.push(EdgeFlip {
            u: pair.u,
            v: pair.v,
            kind,
            iteration: t,
        });
    }
    Ok(BaselineOutcome {
        graph: graph.with_adjacency(adj)?,
        flips,
    })
}

/// Links `budget` random non-adjacent pairs whose endpoints differ in both
/// label and sensitive attribute.
pub fn fagnn_attack(graph: &Graph, budget: usize, seed: u64) -> Result<BaselineOutcome> {
    let n = graph.node_count();
    let labels = graph.labels();
    let mut pool = Vec::new();
    for u in 0..n {
        if labels[u].is_none() {
            continue;
        }
        for v in u + 1..n {
            if labels[v].is_some() && !graph.has_edge(u, v) && graph.classify_edge_group(u, v)? == EdgeGroup::DD {
                pool.push(Pair { u, v });
            }
        }
    }
    if pool.len() < budget {
        return Err(Error::InsufficientFlips {
            requested: budget,
            available: pool.len(),
        });
    }
    let mut r = rng::stream(seed, "fagnn-attack");
    let (chosen, _) = pool.partial_shuffle(&mut r, budget);
    let mut adj = graph.adjacency().clone();
    let mut flips = Vec::with_capacity(budget);
    for (t, &pair) in chosen.iter().enumerate() {
        let kind = adj.toggle(pair);
        debug_assert_eq!(kind, FlipKind::Add);
        flips.push(EdgeFlip {
            u: pair.u,
            v: pair.v,
            kind,
            iteration: t,
        });
    }
    Ok(BaselineOutcome {
        graph: graph.with_adjacency(adj)?,
        flips,
    })
}

/// The greedy attack ranked by `ΔL_f` alone with no utility budget.
pub fn greedy_unconstrained_attack(graph: &Graph, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let cfg = AttackConfig {
        constrained: false,
        utility_budget: UtilityBudget::Unbounded,
        ..cfg.clone()
    };
    run_attack(graph, &cfg)
}

/// Percentage of `flips` falling in each label/sensitive pattern, in
/// `EdgeGroup::ALL` order. Flips touching unlabeled nodes are skipped.
pub fn edge_group_breakdown(graph: &Graph, flips: &[EdgeFlip]) -> [f64; 4] {
    let mut counts = [0usize; 4];
    for f in flips {
        if let Ok(g) = graph.classify_edge_group(f.u, f.v) {
            counts[EdgeGroup::ALL.iter().position(|&x| x == g).unwrap_or(0)] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return [0.0; 4];
    }
    counts.map(|c| 100.0 * c as f64 / total as f64)
}
