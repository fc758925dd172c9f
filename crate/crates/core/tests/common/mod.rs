//! Test fixtures and from-scratch reference computations. Nothing here calls
//! the library's aggregation, loss or scoring code.

#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeSet;

use fairattack_core::attack::{AttackConfig, AttackOutcome};
use fairattack_core::{Adjacency, Graph, Matrix, Pair, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(r: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| r.sample(StandardNormal)).collect()
}

/// Random connected graph: a random recursive tree plus uniform extra edges
/// up to `avg_degree`. Nodes cycle through train/train/train/val/test, and
/// sensitive values alternate so both groups reach the test split.
pub fn random_graph(n: usize, avg_degree: f64, dim: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let mut edges = BTreeSet::new();
    for i in 1..n {
        let j = r.gen_range(0..i);
        edges.insert(Pair::new(i, j).unwrap());
    }
    let target = ((n as f64 * avg_degree / 2.0) as usize).min(n * (n - 1) / 2);
    while edges.len() < target {
        if let Some(p) = Pair::new(r.gen_range(0..n), r.gen_range(0..n)) {
            edges.insert(p);
        }
    }
    let features = Matrix::from_vec(n, dim, gaussian_vec(&mut r, n * dim));
    let labels = (0..n).map(|_| Some(u8::from(r.gen_bool(0.5)))).collect();
    let sensitive = (0..n).map(|i| (i % 2) as u8).collect();
    let split = (0..n)
        .map(|i| match i % 5 {
            0..=2 => Split::Train,
            3 => Split::Val,
            _ => Split::Test,
        })
        .collect();
    Graph::new(Adjacency::from_pairs(n, edges), features, labels, sensitive, split).unwrap()
}

/// Connected 6-node graphs with distinct edge sets. Nodes 0 and 1 are train,
/// 2–5 are test, and sensitive values alternate.
pub fn six_node_fixtures(count: usize, seed: u64) -> Vec<Graph> {
    let mut r = rng(seed);
    let all: Vec<Pair> = (0..6).flat_map(|u| (u + 1..6).map(move |v| Pair { u, v })).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < count {
        let density = r.gen_range(0.3..0.7);
        let edges: BTreeSet<Pair> = all.iter().copied().filter(|_| r.gen_bool(density)).collect();
        if !connected(6, &edges) || !seen.insert(edges.clone()) {
            continue;
        }
        let features = Matrix::from_vec(6, 3, gaussian_vec(&mut r, 18));
        let mut labels: Vec<Option<u8>> = (0..6).map(|_| Some(u8::from(r.gen_bool(0.5)))).collect();
        labels[0] = Some(0);
        labels[1] = Some(1);
        let sensitive = (0..6).map(|i| (i % 2) as u8).collect();
        let split = (0..6).map(|i| if i < 2 { Split::Train } else { Split::Test }).collect();
        out.push(Graph::new(Adjacency::from_pairs(6, edges), features, labels, sensitive, split).unwrap());
    }
    out
}

pub fn connected(n: usize, edges: &BTreeSet<Pair>) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for p in edges {
            let j = if p.u == i {
                p.v
            } else if p.v == i {
                p.u
            } else {
                continue;
            };
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Dense 0/1 adjacency of `g`.
pub fn dense_adjacency(g: &Graph) -> Vec<Vec<u8>> {
    let n = g.node_count();
    let mut a = vec![vec![0u8; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && g.has_edge(i, j) {
                a[i][j] = 1;
            }
        }
    }
    a
}

pub fn toggle(a: &mut [Vec<u8>], p: Pair) {
    a[p.u][p.v] ^= 1;
    a[p.v][p.u] ^= 1;
}

pub fn degree(a: &[Vec<u8>], i: usize) -> usize {
    a[i].iter().map(|&x| usize::from(x)).sum()
}

/// A flip is admissible when it does not leave either endpoint isolated.
pub fn keeps_no_singletons(a: &[Vec<u8>], p: Pair) -> bool {
    if a[p.u][p.v] == 0 {
        return true;
    }
    degree(a, p.u) > 1 && degree(a, p.v) > 1
}

/// `D̂⁻¹ Â D̂⁻¹ Â X` by explicit summation over closed neighborhoods.
pub fn reference_z(a: &[Vec<u8>], x: &Matrix) -> Vec<Vec<f64>> {
    let n = a.len();
    let d = x.cols();
    let closed = |i: usize| (0..n).filter(move |&j| j == i || a[i][j] == 1);
    let dhat: Vec<f64> = (0..n).map(|i| closed(i).count() as f64).collect();
    let mut z = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in closed(i) {
            for k in closed(j) {
                let w = 1.0 / (dhat[i] * dhat[j]);
                for c in 0..d {
                    z[i][c] += w * x.get(k, c);
                }
            }
        }
    }
    z
}

/// Same as [`reference_z`] using neighbor lists, for larger graphs.
pub fn reference_z_sparse(neighbors: &[Vec<usize>], x: &Matrix) -> Vec<Vec<f64>> {
    let n = neighbors.len();
    let d = x.cols();
    let dhat: Vec<f64> = neighbors.iter().map(|nb| nb.len() as f64 + 1.0).collect();
    let mut z = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in std::iter::once(i).chain(neighbors[i].iter().copied()) {
            for k in std::iter::once(j).chain(neighbors[j].iter().copied()) {
                let w = 1.0 / (dhat[i] * dhat[j]);
                for c in 0..d {
                    z[i][c] += w * x.get(k, c);
                }
            }
        }
    }
    z
}

pub fn logits(z: &[Vec<f64>], theta: &[f64]) -> Vec<f64> {
    z.iter()
        .map(|row| row.iter().zip(theta).map(|(a, b)| a * b).sum())
        .collect()
}

/// Mean binary cross-entropy over train nodes, with probabilities clamped to
/// `[1e-12, 1 − 1e-12]`.
pub fn train_loss(g: &Graph, logits: &[f64]) -> f64 {
    let train = g.train_nodes();
    let mut total = 0.0;
    for &i in &train {
        let p = (1.0 / (1.0 + (-logits[i]).exp())).clamp(1e-12, 1.0 - 1e-12);
        total -= if g.labels()[i] == Some(1) {
            p.ln()
        } else {
            (1.0 - p).ln()
        };
    }
    total / train.len() as f64
}

/// Positive-rate gap of `logit ≥ 0` between sensitive groups on test nodes.
pub fn parity_gap(g: &Graph, logits: &[f64]) -> f64 {
    let mut pos = [0.0f64; 2];
    let mut cnt = [0.0f64; 2];
    for i in g.test_nodes() {
        let s = usize::from(g.sensitive()[i]);
        cnt[s] += 1.0;
        if logits[i] >= 0.0 {
            pos[s] += 1.0;
        }
    }
    (pos[0] / cnt[0] - pos[1] / cnt[1]).abs()
}

/// `(L, L_f)` of the surrogate with parameters `theta` on structure `a`.
pub fn reference_losses(g: &Graph, a: &[Vec<u8>], theta: &[f64]) -> (f64, f64) {
    let lg = logits(&reference_z(a, g.features()), theta);
    (train_loss(g, &lg), parity_gap(g, &lg))
}

/// Checks the feasibility invariants of a finished attack by replaying its
/// flips: at most Δ flips, no isolated node after any flip, and every
/// recorded train loss within ε of the clean one.
pub fn check_compliance(clean: &Graph, out: &AttackOutcome) -> Result<(), String> {
    if out.flips.len() > out.budget {
        return Err(format!("{} flips exceed budget {}", out.flips.len(), out.budget));
    }
    let n = clean.node_count();
    let mut deg: Vec<usize> = (0..n).map(|i| clean.degree(i)).collect();
    let mut adj: BTreeSet<Pair> = clean.adjacency().edges().into_iter().collect();
    for f in &out.flips {
        let p = f.pair();
        if adj.remove(&p) {
            deg[p.u] -= 1;
            deg[p.v] -= 1;
        } else {
            adj.insert(p);
            deg[p.u] += 1;
            deg[p.v] += 1;
        }
        if deg[p.u] == 0 || deg[p.v] == 0 {
            return Err(format!("flip ({}, {}) isolates a node", p.u, p.v));
        }
    }
    let final_edges: BTreeSet<Pair> = out.graph.adjacency().edges().into_iter().collect();
    if final_edges != adj {
        return Err("attacked graph does not match the replayed flips".into());
    }
    for r in &out.trace {
        if (r.l - out.clean_loss).abs() > out.epsilon {
            return Err(format!(
                "step {}: |L − L0| = {} exceeds ε = {}",
                r.t,
                (r.l - out.clean_loss).abs(),
                out.epsilon
            ));
        }
    }
    Ok(())
}

/// Attack settings for tests: given budget and utility budget, every pair a
/// candidate, short surrogate training.
pub fn quick_config(budget: usize) -> AttackConfig {
    use fairattack_core::attack::Budget;
    use fairattack_core::fast::CandidateLimit;
    let mut cfg = AttackConfig {
        budget: Budget::Count(budget),
        candidates: CandidateLimit::All,
        ..AttackConfig::default()
    };
    cfg.surrogate.epochs = 300;
    cfg.surrogate.grid_size = 1000;
    cfg
}
