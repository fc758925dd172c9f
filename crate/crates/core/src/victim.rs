//! Victim models: a two-layer GCN with one ReLU hidden layer, optionally
//! trained with a soft demographic-parity penalty. Gradients are written out
//! by hand.
//!
//! The propagation operator is `P = D̂⁻¹Â`, so the linear part of the victim
//! (`P·P·X`) coincides with the surrogate's aggregated features.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, Graph};
use crate::linalg::{sigmoid, Matrix};
use crate::metrics::MetricReport;
use crate::optim::Adam;
use crate::rng;
use crate::surrogate::bce_term;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VictimKind {
    Vanilla,
    Regularized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VictimHyper {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight of the soft Δdp penalty; ignored by the vanilla victim.
    pub reg_weight: f64,
}

impl Default for VictimHyper {
    fn default() -> Self {
        Self {
            hidden_dim: 16,
            epochs: 1000,
            learning_rate: 1e-3,
            reg_weight: 1.0,
        }
    }
}

impl VictimHyper {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::InvalidParameter("hidden_dim must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("victim learning rate must be positive".into()));
        }
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            return Err(Error::InvalidParameter("reg_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Trained victim; serializes as the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimModel {
    pub kind: VictimKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `input_dim × hidden_dim`.
    pub w1: Matrix,
    /// Length `hidden_dim`.
    pub w2: Vec<f64>,
    pub hyper: VictimHyper,
    pub seed: u64,
}

impl VictimModel {
    /// Output logits on `graph`.
    pub fn logits(&self, graph: &Graph) -> Result<Vec<f64>> {
        if graph.feature_dim() != self.input_dim {
            return Err(Error::Dimension(format!(
                "graph has {} features, victim expects {}",
                graph.feature_dim(),
                self.input_dim
            )));
        }
        let px = propagate(graph.adjacency(), graph.features());
        Ok(forward(&px, graph.adjacency(), &self.w1, &self.w2).logits)
    }

    pub fn predict(&self, graph: &Graph) -> Result<Vec<f64>> {
        Ok(self.logits(graph)?.into_iter().map(sigmoid).collect())
    }

    /// Hash of the weight bit patterns; equal weights give equal hashes.
    pub fn weight_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.input_dim.hash(&mut h);
        self.hidden_dim.hash(&mut h);
        for x in self.w1.as_slice().iter().chain(&self.w2) {
            x.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.hidden_dim == 0 || m.w1.rows() != m.input_dim || m.w1.cols() != m.hidden_dim || m.w2.len() != m.hidden_dim
        {
            return Err(Error::Dimension("victim checkpoint shapes disagree".into()));
        }
        if !m.w1.is_finite() || !m.w2.iter().all(|w| w.is_finite()) {
            return Err(Error::Invariant("victim weights must be finite".into()));
        }
        Ok(m)
    }
}

/// `P·M` with `P = D̂⁻¹Â`.
pub fn propagate(adj: &Adjacency, m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..adj.node_count() {
        for &j in adj.neighbors(i) {
            let src = m.row(j).to_vec();
            for (o, v) in out.row_mut(i).iter_mut().zip(src) {
                *o += v;
            }
        }
        let inv = 1.0 / (adj.degree(i) + 1) as f64;
        out.row_mut(i).iter_mut().for_each(|v| *v *= inv);
    }
    out
}

/// `Pᵀ·M`.
fn propagate_transpose(adj: &Adjacency, m: &Matrix) -> Matrix {
    let n = adj.node_count();
    let mut scaled = m.clone();
    for i in 0..n {
        let inv = 1.0 / (adj.degree(i) + 1) as f64;
        scaled.row_mut(i).iter_mut().for_each(|v| *v *= inv);
    }
    let mut out = scaled.clone();
    for j in 0..n {
        for &i in adj.neighbors(j) {
            let src = scaled.row(i).to_vec();
            for (o, v) in out.row_mut(j).iter_mut().zip(src) {
                *o += v;
            }
        }
    }
    out
}

struct Forward {
    /// Pre-activation `P X W1`.
    pre: Matrix,
    /// `P relu(pre)`.
    agg: Matrix,
    logits: Vec<f64>,
}

fn forward(px: &Matrix, adj: &Adjacency, w1: &Matrix, w2: &[f64]) -> Forward {
    let pre = px.matmul(w1);
    let mut hidden = pre.clone();
    hidden.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    let agg = propagate(adj, &hidden);
    let logits = agg.mul_vec(w2);
    Forward { pre, agg, logits }
}

/// Training loss of the victim over fixed propagated inputs.
pub struct VictimObjective<'a> {
    pub px: &'a Matrix,
    pub adjacency: &'a Adjacency,
    pub labels: &'a [Option<u8>],
    pub sensitive: &'a [u8],
    pub train: &'a [usize],
    /// Soft Δdp weight (0 for the vanilla victim).
    pub reg_weight: f64,
}

impl VictimObjective<'_> {
    fn loss_from_logits(&self, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n_train = self.train.len() as f64;
        let mut dlogit = vec![0.0; logits.len()];
        let mut loss = 0.0;
        for &i in self.train {
            let y = self.labels[i].ok_or(Error::Unlabeled(i))?;
            let p = sigmoid(logits[i]);
            loss += bce_term(p, y) / n_train;
            dlogit[i] += (p - f64::from(y)) / n_train;
        }
        if self.reg_weight != 0.0 {
            let mut sum = [0.0f64; 2];
            let mut cnt = [0usize; 2];
            for &i in self.train {
                let s = usize::from(self.sensitive[i]);
                sum[s] += sigmoid(logits[i]);
                cnt[s] += 1;
            }
            if cnt.contains(&0) {
                return Err(Error::EmptyGroup("a sensitive group has no train nodes".into()));
            }
            let gap = sum[0] / cnt[0] as f64 - sum[1] / cnt[1] as f64;
            loss += self.reg_weight * gap.abs();
            let sign = if gap > 0.0 {
                1.0
            } else if gap < 0.0 {
                -1.0
            } else {
                0.0
            };
            for &i in self.train {
                let s = usize::from(self.sensitive[i]);
                let p = sigmoid(logits[i]);
                let dir = if s == 0 { 1.0 } else { -1.0 };
                dlogit[i] += self.reg_weight * sign * dir * p * (1.0 - p) / cnt[s] as f64;
            }
        }
        Ok((loss, dlogit))
    }

    pub fn loss(&self, w1: &Matrix, w2: &[f64]) -> Result<f64> {
        let f = forward(self.px, self.adjacency, w1, w2);
        Ok(self.loss_from_logits(&f.logits)?.0)
    }

    /// Loss with gradients in `W1` and `W2`.
    pub fn loss_and_grad(&self, w1: &Matrix, w2: &[f64]) -> Result<(f64, Matrix, Vec<f64>)> {
        let f = forward(self.px, self.adjacency, w1, w2);
        let (loss, dlogit) = self.loss_from_logits(&f.logits)?;
        let h = w2.len();
        let mut gw2 = vec![0.0; h];
        let mut dagg = Matrix::zeros(dlogit.len(), h);
        for (i, &g) in dlogit.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (k, o) in gw2.iter_mut().enumerate() {
                *o += g * f.agg.get(i, k);
            }
            for (o, &w) in dagg.row_mut(i).iter_mut().zip(w2) {
                *o = g * w;
            }
        }
        let mut dpre = propagate_transpose(self.adjacency, &dagg);
        for (d, &p) in dpre.as_mut_slice().iter_mut().zip(f.pre.as_slice()) {
            if p <= 0.0 {
                *d = 0.0;
            }
        }
        let gw1 = self.px.transpose().matmul(&dpre);
        Ok((loss, gw1, gw2))
    }
}

/// Seeded symmetric-uniform initialization, scale `1/√fan_in` per layer.
pub fn init_weights(input_dim: usize, hidden_dim: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut r = rng::stream(seed, "victim-init");
    let s1 = 1.0 / (input_dim as f64).sqrt();
    let s2 = 1.0 / (hidden_dim as f64).sqrt();
    let w1 = Matrix::from_vec(
        input_dim,
        hidden_dim,
        (0..input_dim * hidden_dim).map(|_| r.gen_range(-s1..s1)).collect(),
    );
    let w2 = (0..hidden_dim).map(|_| r.gen_range(-s2..s2)).collect();
    (w1, w2)
}

pub fn train_victim(graph: &Graph, kind: VictimKind, hyper: &VictimHyper, seed: u64) -> Result<VictimModel> {
    hyper.validate()?;
    let train = graph.train_nodes();
    if train.is_empty() {
        return Err(Error::EmptyGroup("no train nodes".into()));
    }
    let d = graph.feature_dim();
    let px = propagate(graph.adjacency(), graph.features());
    let objective = VictimObjective {
        px: &px,
        adjacency: graph.adjacency(),
        labels: graph.labels(),
        sensitive: graph.sensitive(),
        train: &train,
        reg_weight: match kind {
            VictimKind::Vanilla => 0.0,
            VictimKind::Regularized => hyper.reg_weight,
        },
    };
    let (mut w1, mut w2) = init_weights(d, hyper.hidden_dim, seed);
    let mut opt1 = Adam::new(d * hyper.hidden_dim, hyper.learning_rate);
    let mut opt2 = Adam::new(hyper.hidden_dim, hyper.learning_rate);
    for epoch in 0..hyper.epochs {
        let (loss, g1, g2) = objective.loss_and_grad(&w1, &w2)?;
        if !loss.is_finite() || !g1.is_finite() || g2.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { epoch, loss });
        }
        opt1.step(w1.as_mut_slice(), g1.as_slice());
        opt2.step(&mut w2, &g2);
    }
    Ok(VictimModel {
        kind,
        input_dim: d,
        hidden_dim: hyper.hidden_dim,
        w1,
        w2,
        hyper: hyper.clone(),
        seed,
    })
}

/// Metrics of `model` on `graph` over `nodes`.
pub fn evaluate_victim(model: &VictimModel, graph: &Graph, nodes: &[usize], node_set: &str) -> Result<MetricReport> {
    let preds = model.predict(graph)?;
    let report = MetricReport::from_predictions(&preds, graph.labels(), graph.sensitive(), nodes, node_set);
    report.validate()?;
    Ok(report)
}
