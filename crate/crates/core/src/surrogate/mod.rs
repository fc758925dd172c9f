//! The linearized two-layer GCN surrogate `logits = Z θ` and its training
//! under `CE(train) + α · TV(all nodes)`.

mod aggregate;
mod kde;
mod loss;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate, aggregate_adjacency, AggregatedFeatures};
pub(crate) use kde::{check_grid, group_densities};
pub use kde::{gaussian_kernel, kde_density, tv_loss, tv_loss_on, tv_loss_with_grad};
pub use loss::{bce_term, ce_loss, hard, predict_from_logits, PROB_CLAMP};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::Matrix;
use crate::optim::Adam;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub alpha: f64,
    pub bandwidth: f64,
    pub grid_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            bandwidth: 0.1,
            grid_size: 10_000,
            epochs: 2000,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        check_grid(self.bandwidth, self.grid_size)?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Trained surrogate; serializes as the model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub theta: Vec<f64>,
    pub alpha: f64,
    pub bandwidth: f64,
    pub grid_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl SurrogateModel {
    pub fn logits(&self, zf: &AggregatedFeatures) -> Vec<f64> {
        zf.logits(&self.theta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        check_grid(m.bandwidth, m.grid_size)?;
        if !m.theta.iter().all(|t| t.is_finite()) {
            return Err(Error::Invariant("theta must be finite".into()));
        }
        Ok(m)
    }
}

/// Per-node soft predictions `σ(Z_i · θ)`.
pub fn predict(zf: &AggregatedFeatures, model: &SurrogateModel) -> Result<Vec<f64>> {
    if zf.z.cols() != model.theta.len() {
        return Err(Error::Dimension(format!(
            "features have {} columns but theta has {}",
            zf.z.cols(),
            model.theta.len()
        )));
    }
    Ok(predict_from_logits(&model.logits(zf)))
}

/// Surrogate loss `L_s(θ)` over fixed aggregated features.
pub struct SurrogateObjective<'a> {
    pub z: &'a Matrix,
    pub labels: &'a [Option<u8>],
    pub sensitive: &'a [u8],
    pub train: &'a [usize],
    /// Nodes whose predictions enter the TV term.
    pub fair_nodes: &'a [usize],
    pub alpha: f64,
    pub bandwidth: f64,
    pub grid_size: usize,
}

impl SurrogateObjective<'_> {
    pub fn loss(&self, theta: &[f64]) -> Result<f64> {
        let preds = predict_from_logits(&self.z.mul_vec(theta));
        let mut l = ce_loss(&preds, self.labels, self.train)?;
        if self.alpha != 0.0 {
            l += self.alpha * tv_loss_on(&preds, self.sensitive, self.fair_nodes, self.bandwidth, self.grid_size)?;
        }
        Ok(l)
    }

    /// Loss and analytic gradient in θ.
    pub fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let preds = predict_from_logits(&self.z.mul_vec(theta));
        let mut dlogit = vec![0.0; preds.len()];
        let inv_train = 1.0 / self.train.len() as f64;
        let mut loss = ce_loss(&preds, self.labels, self.train)?;
        for &i in self.train {
            let y = f64::from(self.labels[i].ok_or(Error::Unlabeled(i))?);
            dlogit[i] += (preds[i] - y) * inv_train;
        }
        if self.alpha != 0.0 {
            let (tv, dpred) =
                tv_loss_with_grad(&preds, self.sensitive, self.fair_nodes, self.bandwidth, self.grid_size)?;
            loss += self.alpha * tv;
            for &k in self.fair_nodes {
                dlogit[k] += self.alpha * dpred[k] * preds[k] * (1.0 - preds[k]);
            }
        }
        let mut grad = vec![0.0; theta.len()];
        for (i, &g) in dlogit.iter().enumerate() {
            if g != 0.0 {
                for (o, &zv) in grad.iter_mut().zip(self.z.row(i)) {
                    *o += g * zv;
                }
            }
        }
        Ok((loss, grad))
    }
}

/// Trains θ by full-batch Adam on fixed aggregated features.
pub fn train_on_features(
    zf: &AggregatedFeatures,
    graph: &Graph,
    cfg: &SurrogateConfig,
    epochs: usize,
    warm_start: Option<&[f64]>,
) -> Result<SurrogateModel> {
    cfg.validate()?;
    let train = graph.train_nodes();
    if train.is_empty() {
        return Err(Error::EmptyGroup("no train nodes".into()));
    }
    let all: Vec<usize> = (0..graph.node_count()).collect();
    let objective = SurrogateObjective {
        z: &zf.z,
        labels: graph.labels(),
        sensitive: graph.sensitive(),
        train: &train,
        fair_nodes: &all,
        alpha: cfg.alpha,
        bandwidth: cfg.bandwidth,
        grid_size: cfg.grid_size,
    };
    let d = zf.z.cols();
    let mut theta = match warm_start {
        Some(t) if t.len() == d => t.to_vec(),
        Some(t) => {
            return Err(Error::Dimension(format!(
                "warm start has {} entries, expected {d}",
                t.len()
            )))
        }
        None => {
            let mut r = rng::stream(cfg.seed, "surrogate-init");
            let scale = 1.0 / (d as f64).sqrt();
            (0..d).map(|_| r.gen_range(-scale..scale)).collect()
        }
    };
    let mut opt = Adam::new(d, cfg.learning_rate);
    for epoch in 0..epochs {
        let (loss, grad) = objective.loss_and_grad(&theta)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { epoch, loss });
        }
        opt.step(&mut theta, &grad);
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Diverged {
            epoch: epochs,
            loss: f64::NAN,
        });
    }
    Ok(SurrogateModel {
        theta,
        alpha: cfg.alpha,
        bandwidth: cfg.bandwidth,
        grid_size: cfg.grid_size,
        epochs,
        seed: cfg.seed,
    })
}

/// Aggregates `graph` and trains the surrogate for `cfg.epochs`.
pub fn train_surrogate(graph: &Graph, cfg: &SurrogateConfig, warm_start: Option<&[f64]>) -> Result<SurrogateModel> {
    let zf = aggregate(graph);
    train_on_features(&zf, graph, cfg, cfg.epochs, warm_start)
}
