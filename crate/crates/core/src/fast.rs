//! Incremental maintenance of the aggregated features under single-edge
//! flips, the importance score, and top-`a` candidate generation.
//!
//! A flip of `(u, v)` only changes rows of `Z` inside `N̂_u ∪ N̂_v` (closed
//! neighborhoods). Rows `u, v` follow the endpoint update and the other
//! touched rows the neighbor update; every other row is untouched. The
//! update formulas are linear in the cached rows, so the same closed forms
//! applied to `θ`-projected caches give post-flip logits in O(1) per row.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, FlipKind, Graph, Pair};
#[cfg(debug_assertions)]
use crate::linalg::dot;
use crate::linalg::Matrix;
use crate::surrogate::{aggregate_adjacency, AggregatedFeatures};

/// New `Z` rows for the touched rows of one hypothetical flip.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipDelta {
    pub pair: Pair,
    pub kind: FlipKind,
    /// `N̂_u ∪ N̂_v`, sorted.
    pub touched_rows: Vec<usize>,
    /// Row `r` replaces `Z[touched_rows[r]]`.
    pub new_rows: Matrix,
}

/// Endpoint update for row `i ∈ {u, v}`; `j` is the other endpoint.
#[allow(clippy::too_many_arguments)]
#[inline]
fn endpoint_update(kind: FlipKind, z_i: f64, ax_i: f64, ax_j: f64, x_i: f64, x_j: f64, di: f64, dj: f64) -> f64 {
    match kind {
        FlipKind::Add => {
            di / (di + 1.0) * (z_i - ax_i / (di * di))
                + (ax_i + x_j) / ((di + 1.0) * (di + 1.0))
                + (ax_j + x_i) / ((di + 1.0) * (dj + 1.0))
        }
        FlipKind::Remove => {
            di / (di - 1.0) * (z_i - ax_i / (di * di) - ax_j / (di * dj)) + (ax_i - x_j) / ((di - 1.0) * (di - 1.0))
        }
    }
}

/// Change contributed to a neighbor row `i` by endpoint `e` gaining or losing
/// the other endpoint `o`; the neighbor update subtracts this.
#[inline]
fn neighbor_term(kind: FlipKind, ax_e: f64, x_o: f64, di: f64, de: f64) -> f64 {
    match kind {
        FlipKind::Add => ax_e / (di * de) - (ax_e + x_o) / (di * (de + 1.0)),
        FlipKind::Remove => ax_e / (di * de) - (ax_e - x_o) / (di * (de - 1.0)),
    }
}

/// Sorted union of two sorted slices.
fn sorted_union(a: &[usize], b: &[usize], out: &mut Vec<usize>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
}

/// `θ`-projected caches: `Zθ`, `(ÂX)θ`, `Xθ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub logits: Vec<f64>,
    pub ax_theta: Vec<f64>,
    pub x_theta: Vec<f64>,
}

/// Mutable structure plus the caches `Z`, `ÂX`, `d̂` kept consistent with it.
#[derive(Debug, Clone)]
pub struct FastState {
    adjacency: Adjacency,
    x: Matrix,
    agg: AggregatedFeatures,
    #[cfg(debug_assertions)]
    z_sq_norm: f64,
}

impl FastState {
    pub fn new(graph: &Graph) -> Self {
        let adjacency = graph.adjacency().clone();
        let x = graph.features().clone();
        let agg = aggregate_adjacency(&adjacency, &x);
        Self {
            #[cfg(debug_assertions)]
            z_sq_norm: agg.z.frobenius_norm().powi(2),
            adjacency,
            x,
            agg,
        }
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn features(&self) -> &AggregatedFeatures {
        &self.agg
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.node_count()
    }

    /// Closed neighborhood `N̂_i` (includes `i`), sorted.
    pub fn closed_neighborhood(&self, i: usize, out: &mut Vec<usize>) {
        let nb = self.adjacency.neighbors(i);
        out.clear();
        out.reserve(nb.len() + 1);
        let pos = nb.partition_point(|&j| j < i);
        out.extend_from_slice(&nb[..pos]);
        out.push(i);
        out.extend_from_slice(&nb[pos..]);
    }

    fn touched(&self, pair: Pair) -> Vec<usize> {
        let (mut nu, mut nv, mut out) = (Vec::new(), Vec::new(), Vec::new());
        self.closed_neighborhood(pair.u, &mut nu);
        self.closed_neighborhood(pair.v, &mut nv);
        sorted_union(&nu, &nv, &mut out);
        out
    }

    pub fn flip_kind(&self, pair: Pair) -> FlipKind {
        if self.adjacency.has_edge(pair.u, pair.v) {
            FlipKind::Remove
        } else {
            FlipKind::Add
        }
    }

    pub fn is_feasible(&self, pair: Pair) -> bool {
        self.adjacency.flip_keeps_no_singletons(pair)
    }

    fn checked_kind(&self, pair: Pair) -> Result<FlipKind> {
        if pair.u >= pair.v || pair.v >= self.node_count() {
            return Err(Error::InvalidParameter(format!("bad pair ({}, {})", pair.u, pair.v)));
        }
        if !self.is_feasible(pair) {
            return Err(Error::InfeasibleFlip(pair.u, pair.v));
        }
        Ok(self.flip_kind(pair))
    }

    /// Post-flip `Z` rows for `N̂_u ∪ N̂_v`, computed from the caches.
    pub fn incremental_flip_z(&self, pair: Pair) -> Result<FlipDelta> {
        let kind = self.checked_kind(pair)?;
        let touched = self.touched(pair);
        let d = self.x.cols();
        let Pair { u, v } = pair;
        let (du, dv) = (self.agg.dhat[u] as f64, self.agg.dhat[v] as f64);
        let mut new_rows = Matrix::zeros(touched.len(), d);
        for (r, &i) in touched.iter().enumerate() {
            let out = new_rows.row_mut(r);
            let z_i = self.agg.z.row(i);
            if i == u || i == v {
                let (j, di, dj) = if i == u { (v, du, dv) } else { (u, dv, du) };
                let (ax_i, ax_j) = (self.agg.ax.row(i), self.agg.ax.row(j));
                let (x_i, x_j) = (self.x.row(i), self.x.row(j));
                for k in 0..d {
                    out[k] = endpoint_update(kind, z_i[k], ax_i[k], ax_j[k], x_i[k], x_j[k], di, dj);
                }
            } else {
                let di = self.agg.dhat[i] as f64;
                let in_u = self.adjacency.has_edge(i, u);
                let in_v = self.adjacency.has_edge(i, v);
                out.copy_from_slice(z_i);
                if in_u {
                    let (ax_u, x_v) = (self.agg.ax.row(u), self.x.row(v));
                    for k in 0..d {
                        out[k] -= neighbor_term(kind, ax_u[k], x_v[k], di, du);
                    }
                }
                if in_v {
                    let (ax_v, x_u) = (self.agg.ax.row(v), self.x.row(u));
                    for k in 0..d {
                        out[k] -= neighbor_term(kind, ax_v[k], x_u[k], di, dv);
                    }
                }
            }
        }
        Ok(FlipDelta {
            pair,
            kind,
            touched_rows: touched,
            new_rows,
        })
    }

    pub fn project(&self, theta: &[f64]) -> Projection {
        Projection {
            logits: self.agg.z.mul_vec(theta),
            ax_theta: self.agg.ax.mul_vec(theta),
            x_theta: self.x.mul_vec(theta),
        }
    }

    /// Post-flip logits of the touched rows, written as `(row, logit)` into
    /// `out`. Same closed forms as [`Self::incremental_flip_z`], applied to
    /// the projected caches.
    pub fn flip_logits(&self, pair: Pair, proj: &Projection, out: &mut Vec<(usize, f64)>) -> Result<FlipKind> {
        let kind = self.checked_kind(pair)?;
        let Pair { u, v } = pair;
        let (du, dv) = (self.agg.dhat[u] as f64, self.agg.dhat[v] as f64);
        out.clear();
        let mut push_neighbor = |i: usize, in_u: bool, in_v: bool| {
            let di = self.agg.dhat[i] as f64;
            let mut l = proj.logits[i];
            if in_u {
                l -= neighbor_term(kind, proj.ax_theta[u], proj.x_theta[v], di, du);
            }
            if in_v {
                l -= neighbor_term(kind, proj.ax_theta[v], proj.x_theta[u], di, dv);
            }
            out.push((i, l));
        };
        // Merge the open neighborhoods of u and v, skipping the endpoints.
        let (nu, nv) = (self.adjacency.neighbors(u), self.adjacency.neighbors(v));
        let (mut a, mut b) = (0, 0);
        while a < nu.len() || b < nv.len() {
            let next_u = nu.get(a).copied().unwrap_or(usize::MAX);
            let next_v = nv.get(b).copied().unwrap_or(usize::MAX);
            let (i, in_u, in_v) = match next_u.cmp(&next_v) {
                Ordering::Less => {
                    a += 1;
                    (next_u, true, false)
                }
                Ordering::Greater => {
                    b += 1;
                    (next_v, false, true)
                }
                Ordering::Equal => {
                    a += 1;
                    b += 1;
                    (next_u, true, true)
                }
            };
            if i != u && i != v {
                push_neighbor(i, in_u, in_v);
            }
        }
        for (i, j, di, dj) in [(u, v, du, dv), (v, u, dv, du)] {
            let l = endpoint_update(
                kind,
                proj.logits[i],
                proj.ax_theta[i],
                proj.ax_theta[j],
                proj.x_theta[i],
                proj.x_theta[j],
                di,
                dj,
            );
            out.push((i, l));
        }
        Ok(kind)
    }

    /// Applies the flip to the structure and every cache.
    pub fn commit_flip(&mut self, pair: Pair) -> Result<FlipKind> {
        let delta = self.incremental_flip_z(pair)?;
        #[cfg(debug_assertions)]
        let mut sq = self.z_sq_norm;
        for (r, &i) in delta.touched_rows.iter().enumerate() {
            #[cfg(debug_assertions)]
            {
                sq += dot(delta.new_rows.row(r), delta.new_rows.row(r)) - dot(self.agg.z.row(i), self.agg.z.row(i));
            }
            self.agg.z.row_mut(i).copy_from_slice(delta.new_rows.row(r));
        }
        let Pair { u, v } = pair;
        let sign = match delta.kind {
            FlipKind::Add => 1.0,
            FlipKind::Remove => -1.0,
        };
        for (i, j) in [(u, v), (v, u)] {
            let xj: Vec<f64> = self.x.row(j).to_vec();
            for (a, b) in self.agg.ax.row_mut(i).iter_mut().zip(&xj) {
                *a += sign * b;
            }
            match delta.kind {
                FlipKind::Add => self.agg.dhat[i] += 1,
                FlipKind::Remove => self.agg.dhat[i] -= 1,
            }
        }
        self.adjacency.toggle(pair);
        #[cfg(debug_assertions)]
        {
            self.z_sq_norm = sq;
            self.verify_checksum()?;
        }
        Ok(delta.kind)
    }

    /// Cheap consistency check: `Σ d̂ = n + 2|E|` and the running `‖Z‖²`
    /// agrees with the cached matrix.
    pub fn verify_checksum(&self) -> Result<()> {
        let n = self.node_count();
        let sum: usize = self.agg.dhat.iter().sum();
        if sum != n + 2 * self.adjacency.edge_count() {
            return Err(Error::CacheMismatch(format!(
                "degree sum {sum} != {}",
                n + 2 * self.adjacency.edge_count()
            )));
        }
        #[cfg(debug_assertions)]
        {
            let actual = self.agg.z.frobenius_norm().powi(2);
            if (actual - self.z_sq_norm).abs() > 1e-8 * actual.max(1.0) {
                return Err(Error::CacheMismatch(format!(
                    "running ‖Z‖² {} != {actual}",
                    self.z_sq_norm
                )));
            }
        }
        Ok(())
    }

    /// Full recomputation of the caches from the current structure.
    pub fn recompute(&self) -> AggregatedFeatures {
        aggregate_adjacency(&self.adjacency, &self.x)
    }
}

/// Per-node confidence deficits `M − |logit_i|` and their closed-neighborhood
/// sums, from which `ρ(u, v)` is assembled.
#[derive(Debug, Clone)]
pub struct ImportanceIndex {
    deficit: Vec<f64>,
    neighborhood_sum: Vec<f64>,
}

impl ImportanceIndex {
    pub fn new(state: &FastState, logits: &[f64]) -> Self {
        let max_abs = logits.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        let deficit: Vec<f64> = logits.iter().map(|l| max_abs - l.abs()).collect();
        let neighborhood_sum = (0..state.node_count())
            .map(|i| deficit[i] + state.adjacency.neighbors(i).iter().map(|&j| deficit[j]).sum::<f64>())
            .collect();
        Self {
            deficit,
            neighborhood_sum,
        }
    }

    /// `S_u + S_v`; never below the exact score.
    #[inline]
    pub fn upper_bound(&self, pair: Pair) -> f64 {
        self.neighborhood_sum[pair.u] + self.neighborhood_sum[pair.v]
    }

    /// `ρ(u, v) = Σ_{i ∈ N̂_u ∪ N̂_v} (M − |logit_i|)`, shared nodes once.
    pub fn score(&self, state: &FastState, pair: Pair) -> f64 {
        let (nu, nv) = (state.adjacency.neighbors(pair.u), state.adjacency.neighbors(pair.v));
        // Overlap of the closed neighborhoods: common neighbors, plus both
        // endpoints when (u, v) is an edge.
        let mut overlap = 0.0;
        let (mut a, mut b) = (0, 0);
        while a < nu.len() && b < nv.len() {
            match nu[a].cmp(&nv[b]) {
                Ordering::Less => a += 1,
                Ordering::Greater => b += 1,
                Ordering::Equal => {
                    overlap += self.deficit[nu[a]];
                    a += 1;
                    b += 1;
                }
            }
        }
        if state.adjacency.has_edge(pair.u, pair.v) {
            overlap += self.deficit[pair.u] + self.deficit[pair.v];
        }
        self.upper_bound(pair) - overlap
    }
}

/// Importance score of one pair under logits `Z θ`.
pub fn importance_score(state: &FastState, theta: &[f64], a: usize, b: usize) -> Result<f64> {
    let pair = Pair::new(a, b).ok_or(Error::SelfLoop(a))?;
    let logits = state.agg.z.mul_vec(theta);
    Ok(ImportanceIndex::new(state, &logits).score(state, pair))
}

/// How many candidates to keep per round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateLimit {
    All,
    Count(usize),
    /// Fraction of all `n(n−1)/2` node pairs, at least one.
    Fraction(f64),
}

impl CandidateLimit {
    /// `None` means every admissible pair.
    pub fn resolve(&self, n: usize) -> Result<Option<usize>> {
        match *self {
            CandidateLimit::All => Ok(None),
            CandidateLimit::Count(0) => Err(Error::InvalidParameter("candidate count must be >= 1".into())),
            CandidateLimit::Count(k) => Ok(Some(k)),
            CandidateLimit::Fraction(f) if f > 0.0 && f <= 1.0 => {
                let pairs = (n * n.saturating_sub(1) / 2) as f64;
                Ok(Some(((f * pairs).ceil() as usize).max(1)))
            }
            CandidateLimit::Fraction(f) => Err(Error::InvalidParameter(format!(
                "candidate fraction must lie in (0, 1], got {f}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ranked {
    score: f64,
    pair: Pair,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    /// Greater is better: higher score, then lower canonical pair.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.pair.cmp(&self.pair))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Work counters for one candidate-generation call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RankingStats {
    /// Admissible pairs whose upper bound was computed.
    pub pairs_scanned: usize,
    /// Pairs whose exact `ρ` was computed.
    pub exact_scores: usize,
}

/// Top-`limit` admissible pairs by `ρ` (ties by canonical order), excluding
/// `excluded` and flips that would create a singleton. `None` returns every
/// admissible pair in canonical order.
pub fn build_candidates(
    state: &FastState,
    logits: &[f64],
    limit: Option<usize>,
    excluded: &HashSet<Pair>,
) -> Result<(Vec<Pair>, RankingStats)> {
    let n = state.node_count();
    let mut stats = RankingStats::default();
    let admissible = |pair: Pair| !excluded.contains(&pair) && state.is_feasible(pair);

    let Some(limit) = limit else {
        let mut all = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                let p = Pair { u, v };
                if admissible(p) {
                    all.push(p);
                }
            }
        }
        stats.pairs_scanned = all.len();
        if all.is_empty() {
            return Err(Error::NoCandidates);
        }
        return Ok((all, stats));
    };

    let index = ImportanceIndex::new(state, logits);
    let mut bounds: Vec<Ranked> = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let pair = Pair { u, v };
            if admissible(pair) {
                bounds.push(Ranked {
                    score: index.upper_bound(pair),
                    pair,
                });
            }
        }
    }
    stats.pairs_scanned = bounds.len();
    if bounds.is_empty() {
        return Err(Error::NoCandidates);
    }
    bounds.sort_unstable_by(|a, b| b.cmp(a));

    // Exact scores never exceed the bound, so the scan stops once the bound
    // drops strictly below the current a-th best exact score.
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(limit + 1);
    for cand in bounds {
        if heap.len() == limit {
            let worst = heap.peek().expect("non-empty").0;
            if cand.score < worst.score {
                break;
            }
        }
        let exact = Ranked {
            score: index.score(state, cand.pair),
            pair: cand.pair,
        };
        stats.exact_scores += 1;
        if heap.len() < limit {
            heap.push(Reverse(exact));
        } else if exact > heap.peek().expect("non-empty").0 {
            heap.pop();
            heap.push(Reverse(exact));
        }
    }
    let mut top: Vec<Ranked> = heap.into_iter().map(|r| r.0).collect();
    top.sort_unstable_by(|a, b| b.cmp(a));
    Ok((top.into_iter().map(|r| r.pair).collect(), stats))
}
