//! Attacker objective and evaluation metrics.
//!
//! Metrics that need a non-empty conditional group return `None` when that
//! group is empty; a silent zero would read as perfect fairness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::{check_grid, group_densities, hard};

/// Demographic-parity gap of hard predictions over `test`:
/// `|Σ_{i∈test} k_i · 1[logit_i ≥ 0]|` with `k_i = ±1/|V_{s_i} ∩ test|`.
pub fn attacker_objective(logits: &[f64], sensitive: &[u8], test: &[usize]) -> Result<f64> {
    let mut pos = [0usize; 2];
    let mut cnt = [0usize; 2];
    for &i in test {
        let s = usize::from(sensitive[i]);
        cnt[s] += 1;
        pos[s] += usize::from(hard(logits[i]));
    }
    if cnt[0] == 0 || cnt[1] == 0 {
        return Err(Error::EmptyGroup(format!(
            "sensitive group {} has no test nodes",
            usize::from(cnt[0] != 0)
        )));
    }
    Ok((pos[0] as f64 / cnt[0] as f64 - pos[1] as f64 / cnt[1] as f64).abs())
}

/// `|Pr(ŷ=1 | s=0) − Pr(ŷ=1 | s=1)|` over `nodes`.
pub fn delta_dp(hard_preds: &[bool], sensitive: &[u8], nodes: &[usize]) -> Option<f64> {
    rate_gap(nodes.iter().map(|&i| (sensitive[i], hard_preds[i])))
}

/// True-positive-rate gap between sensitive groups over labeled positives in
/// `nodes`.
pub fn delta_eo(hard_preds: &[bool], labels: &[Option<u8>], sensitive: &[u8], nodes: &[usize]) -> Option<f64> {
    rate_gap(
        nodes
            .iter()
            .filter(|&&i| labels[i] == Some(1))
            .map(|&i| (sensitive[i], hard_preds[i])),
    )
}

fn rate_gap(items: impl Iterator<Item = (u8, bool)>) -> Option<f64> {
    let mut pos = [0usize; 2];
    let mut cnt = [0usize; 2];
    for (s, p) in items {
        let s = usize::from(s);
        cnt[s] += 1;
        pos[s] += usize::from(p);
    }
    if cnt[0] == 0 || cnt[1] == 0 {
        return None;
    }
    Some((pos[0] as f64 / cnt[0] as f64 - pos[1] as f64 / cnt[1] as f64).abs())
}

/// Fraction of labeled nodes in `nodes` whose hard prediction matches.
pub fn accuracy(hard_preds: &[bool], labels: &[Option<u8>], nodes: &[usize]) -> Option<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for &i in nodes {
        if let Some(y) = labels[i] {
            total += 1;
            correct += usize::from(hard_preds[i] == (y == 1));
        }
    }
    (total > 0).then(|| correct as f64 / total as f64)
}

/// Rank-based AUC (Mann–Whitney U with mid-ranks for ties).
pub fn auc(soft_preds: &[f64], labels: &[Option<u8>], nodes: &[usize]) -> Option<f64> {
    let mut scored: Vec<(f64, bool)> = nodes
        .iter()
        .filter_map(|&i| labels[i].map(|y| (soft_preds[i], y == 1)))
        .collect();
    let n_pos = scored.iter().filter(|s| s.1).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j + 1 < scored.len() && scored[j + 1].0 == scored[i].0 {
            j += 1;
        }
        // Ranks are 1-based; the tie block [i, j] shares its mean rank.
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid_rank * scored[i..=j].iter().filter(|s| s.1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// `∫₀¹ |F₀⁻¹(t) − F₁⁻¹(t)| dt` between two empirical distributions.
pub fn wasserstein1_empirical(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyGroup("wasserstein sample is empty".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    // Quantile functions are piecewise constant with breaks at k/na and l/nb.
    let (mut i, mut j) = (0usize, 0usize);
    let mut t = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        let next_a = (i + 1) as f64 / na as f64;
        let next_b = (j + 1) as f64 / nb as f64;
        let next = next_a.min(next_b);
        total += (next - t) * (a[i] - b[j]).abs();
        t = next;
        // Compare integer cross-products to advance both on exact ties.
        let lhs = (i + 1) * nb;
        let rhs = (j + 1) * na;
        if lhs <= rhs {
            i += 1;
        }
        if rhs <= lhs {
            j += 1;
        }
    }
    Ok(total)
}

/// Grid-integrated mutual information between predictions and the sensitive
/// attribute, with KDE conditionals and group-frequency priors.
pub fn mutual_information_kde(predictions: &[f64], sensitive: &[u8], h: f64, m: usize) -> Result<f64> {
    check_grid(h, m)?;
    let nodes: Vec<usize> = (0..predictions.len()).collect();
    let dens = group_densities(predictions, sensitive, &nodes, h, m)?;
    let n = (dens.n0 + dens.n1) as f64;
    let (w0, w1) = (dens.n0 as f64 / n, dens.n1 as f64 / n);
    let mut total = 0.0;
    for (&p0, &p1) in dens.p0.iter().zip(&dens.p1) {
        let marginal = w0 * p0 + w1 * p1;
        for (w, p) in [(w0, p0), (w1, p1)] {
            let joint = w * p;
            if joint >= 1e-12 {
                total += joint * (p / marginal).ln();
            }
        }
    }
    Ok(total / m as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: Option<f64>,
    pub auc: Option<f64>,
    pub delta_dp: Option<f64>,
    pub delta_eo: Option<f64>,
    pub node_set: String,
}

impl MetricReport {
    /// Scores soft predictions (hard threshold at 1/2, inclusive).
    pub fn from_predictions(
        soft_preds: &[f64],
        labels: &[Option<u8>],
        sensitive: &[u8],
        nodes: &[usize],
        node_set: impl Into<String>,
    ) -> Self {
        let hard_preds: Vec<bool> = soft_preds.iter().map(|&p| p >= 0.5).collect();
        Self {
            acc: accuracy(&hard_preds, labels, nodes),
            auc: auc(soft_preds, labels, nodes),
            delta_dp: delta_dp(&hard_preds, sensitive, nodes),
            delta_eo: delta_eo(&hard_preds, labels, sensitive, nodes),
            node_set: node_set.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("acc", self.acc),
            ("auc", self.auc),
            ("delta_dp", self.delta_dp),
            ("delta_eo", self.delta_eo),
        ] {
            if let Some(x) = v {
                if !(x.is_finite() && (0.0..=1.0).contains(&x)) {
                    return Err(Error::Invariant(format!("{name} = {x} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}
