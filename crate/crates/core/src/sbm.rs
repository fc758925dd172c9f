//! Two-block stochastic block model with group-shifted Gaussian attributes.
//!
//! Blocks coincide with the sensitive attribute. `homophily` is the expected
//! fraction of edges that stay inside a block; labels come from a random
//! linear score of the attributes, and the attribute shift between blocks
//! correlates labels with the sensitive attribute.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, Graph, Pair, Split};
use crate::linalg::{dot, Matrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmConfig {
    pub n: usize,
    pub feature_dim: usize,
    pub homophily: f64,
    pub label_noise: f64,
    /// Expected mean degree.
    pub avg_degree: f64,
    /// Distance between the two blocks' attribute means.
    pub sensitive_shift: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            n: 500,
            feature_dim: 16,
            homophily: 0.8,
            label_noise: 0.1,
            avg_degree: 8.0,
            sensitive_shift: 1.0,
            seed: 0,
        }
    }
}

impl SbmConfig {
    /// Probabilities `(p_in, p_out)` for intra- and inter-block pairs.
    pub fn edge_probabilities(&self) -> (f64, f64) {
        let n0 = self.n.div_ceil(2) as f64;
        let n1 = (self.n / 2) as f64;
        let intra_pairs = n0 * (n0 - 1.0) / 2.0 + n1 * (n1 - 1.0) / 2.0;
        let inter_pairs = n0 * n1;
        let expected_edges = self.n as f64 * self.avg_degree / 2.0;
        let p_in = (self.homophily * expected_edges / intra_pairs).min(1.0);
        let p_out = ((1.0 - self.homophily) * expected_edges / inter_pairs).min(1.0);
        (p_in, p_out)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::InvalidParameter(format!("n must be >= 8, got {}", self.n)));
        }
        if self.feature_dim < 1 {
            return Err(Error::InvalidParameter("feature_dim must be >= 1".into()));
        }
        for (name, v) in [("homophily", self.homophily), ("label_noise", self.label_noise)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.avg_degree > 0.0 && self.avg_degree.is_finite()) {
            return Err(Error::InvalidParameter("avg_degree must be positive".into()));
        }
        if !self.sensitive_shift.is_finite() {
            return Err(Error::InvalidParameter("sensitive_shift must be finite".into()));
        }
        Ok(())
    }
}

pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.n;
    let d = cfg.feature_dim;
    let n0 = n.div_ceil(2);
    let sensitive: Vec<u8> = (0..n).map(|i| u8::from(i >= n0)).collect();

    let mut edge_rng = rng::stream(cfg.seed, "sbm-edges");
    let (p_in, p_out) = cfg.edge_probabilities();
    let mut pairs = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if sensitive[u] == sensitive[v] { p_in } else { p_out };
            if p > 0.0 && edge_rng.gen::<f64>() < p {
                pairs.push(Pair { u, v });
            }
        }
    }

    let mut feat_rng = rng::stream(cfg.seed, "sbm-features");
    let gaussian = |r: &mut rng::Rng| -> f64 { StandardNormal.sample(r) };
    let w = unit((0..d).map(|_| gaussian(&mut feat_rng)).collect());
    let noise_dir = unit((0..d).map(|_| gaussian(&mut feat_rng)).collect());
    // Shift direction leans on the label direction so groups differ in base rate.
    let shift_dir = unit(w.iter().zip(&noise_dir).map(|(a, b)| a + b).collect());
    let mut features = Matrix::zeros(n, d);
    for i in 0..n {
        let offset = (f64::from(sensitive[i]) - 0.5) * cfg.sensitive_shift;
        for (k, x) in features.row_mut(i).iter_mut().enumerate() {
            *x = gaussian(&mut feat_rng) + offset * shift_dir[k];
        }
    }

    let mut label_rng = rng::stream(cfg.seed, "sbm-labels");
    let labels: Vec<Option<u8>> = (0..n)
        .map(|i| {
            let clean = dot(features.row(i), &w) >= 0.0;
            let flipped = label_rng.gen::<f64>() < cfg.label_noise;
            Some(u8::from(clean ^ flipped))
        })
        .collect();

    let mut split_rng = rng::stream(cfg.seed, "sbm-split");
    let mut split = vec![Split::Train; n];
    for block in [0..n0, n0..n] {
        let mut members: Vec<usize> = block.collect();
        members.shuffle(&mut split_rng);
        let m = members.len();
        let n_train = (m as f64 * 0.5).round() as usize;
        let n_val = (m as f64 * 0.2).round() as usize;
        for (rank, &i) in members.iter().enumerate() {
            split[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }

    Graph::new(Adjacency::from_pairs(n, pairs), features, labels, sensitive, split)
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}
