//! The sequential greedy attack: score candidate flips by exact loss
//! differences under the surrogate, commit the best one that respects the
//! utility budget, repeat until the edge budget is spent.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fast::{build_candidates, CandidateLimit, FastState, Projection};
use crate::graph::{write_atomic, EdgeFlip, FlipKind, Graph, Pair, Split};
use crate::linalg::{fmt_num, sigmoid};
use crate::rng;
use crate::surrogate::{bce_term, hard, train_on_features, SurrogateConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Evasion,
    Poisoning,
}

/// Maximum number of flips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Count(usize),
    /// Fraction of the clean edge count, floored, at least one.
    Fraction(f64),
}

impl Budget {
    pub fn resolve(&self, edge_count: usize) -> Result<usize> {
        match *self {
            Budget::Count(k) => Ok(k),
            Budget::Fraction(f) if f > 0.0 && f.is_finite() => Ok(((f * edge_count as f64).floor() as usize).max(1)),
            Budget::Fraction(f) => Err(Error::InvalidParameter(format!(
                "edge budget fraction must be positive, got {f}"
            ))),
        }
    }
}

/// Allowed drift of the train loss from its clean value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtilityBudget {
    Absolute(f64),
    /// Fraction of the clean train loss.
    Relative(f64),
    Unbounded,
}

impl UtilityBudget {
    pub fn resolve(&self, clean_loss: f64) -> Result<f64> {
        let eps = match *self {
            UtilityBudget::Absolute(e) => e,
            UtilityBudget::Relative(r) => {
                if !(r >= 0.0) {
                    return Err(Error::InvalidParameter(format!("relative ε must be >= 0, got {r}")));
                }
                r * clean_loss
            }
            UtilityBudget::Unbounded => f64::INFINITY,
        };
        if !(eps >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "utility budget must be >= 0, got {eps}"
            )));
        }
        Ok(eps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub budget: Budget,
    pub utility_budget: UtilityBudget,
    pub candidates: CandidateLimit,
    /// Penalize utility change in the score; `false` ranks by `ΔL_f` alone.
    pub constrained: bool,
    pub mode: Mode,
    pub retrain_epochs: usize,
    pub surrogate: SurrogateConfig,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            budget: Budget::Fraction(0.05),
            utility_budget: UtilityBudget::Relative(0.05),
            candidates: CandidateLimit::Fraction(0.1),
            constrained: true,
            mode: Mode::Evasion,
            retrain_epochs: 200,
            surrogate: SurrogateConfig::default(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        self.surrogate.validate()?;
        self.budget.resolve(1)?;
        self.utility_budget.resolve(1.0)?;
        self.candidates.resolve(2)?;
        Ok(())
    }

    pub fn surrogate_config(&self) -> SurrogateConfig {
        SurrogateConfig {
            seed: rng::derive_seed(self.seed, "surrogate"),
            ..self.surrogate.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub u: usize,
    pub v: usize,
    pub kind: FlipKind,
    pub delta_lf: f64,
    pub delta_l: f64,
    pub score: f64,
    /// Attacker objective after the flip.
    pub lf: f64,
    /// Train loss after the flip.
    pub l: f64,
}

/// Scores of one round. `scores[i] = q[i] − c·|p[i]|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRound {
    pub candidates: Vec<Pair>,
    /// `ΔL` per candidate.
    pub p: Vec<f64>,
    /// `ΔL_f` per candidate.
    pub q: Vec<f64>,
    pub c: f64,
    pub scores: Vec<f64>,
}

impl ScoreRound {
    /// Candidate indices from best to worst (ties: canonical pair order).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.candidates.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[b]
                .total_cmp(&self.scores[a])
                .then_with(|| self.candidates[a].cmp(&self.candidates[b]))
        });
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetExhausted,
    NoCandidates,
    /// The best remaining score is negative.
    NoImprovement,
    /// Every remaining candidate would break the utility budget.
    UtilityBudget,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    pub candidates_evaluated: usize,
    pub pairs_ranked: usize,
    pub ranking_time: f64,
    pub score_time: f64,
    /// Attacker objective at the end of the round.
    pub objective: f64,
}

/// Mutable attack state over one graph: structure with caches, surrogate
/// parameters, current losses and history.
pub struct AttackState<'g> {
    graph: &'g Graph,
    fast: FastState,
    theta: Vec<f64>,
    proj: Projection,
    train: Vec<usize>,
    is_train: Vec<bool>,
    is_test: Vec<bool>,
    test_count: [usize; 2],
    test_pos: [usize; 2],
    loss: f64,
    objective: f64,
    pub flips: Vec<EdgeFlip>,
    pub trace: Vec<TraceRecord>,
}

impl<'g> AttackState<'g> {
    pub fn new(graph: &'g Graph, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != graph.feature_dim() {
            return Err(Error::Dimension(format!(
                "theta has {} entries, features have {}",
                theta.len(),
                graph.feature_dim()
            )));
        }
        let train = graph.train_nodes();
        if train.is_empty() {
            return Err(Error::EmptyGroup("no train nodes".into()));
        }
        let n = graph.node_count();
        let is_train = graph.split().iter().map(|&s| s == Split::Train).collect();
        let is_test: Vec<bool> = graph.split().iter().map(|&s| s == Split::Test).collect();
        let mut test_count = [0usize; 2];
        for i in (0..n).filter(|&i| is_test[i]) {
            test_count[usize::from(graph.sensitive()[i])] += 1;
        }
        let fast = FastState::new(graph);
        let proj = fast.project(&theta);
        let mut state = Self {
            graph,
            fast,
            theta,
            proj,
            train,
            is_train,
            is_test,
            test_count,
            test_pos: [0; 2],
            loss: 0.0,
            objective: 0.0,
            flips: Vec::new(),
            trace: Vec::new(),
        };
        state.refresh()?;
        Ok(state)
    }

    /// Recomputes the projection and both losses from the caches.
    fn refresh(&mut self) -> Result<()> {
        self.proj = self.fast.project(&self.theta);
        let sens = self.graph.sensitive();
        let mut pos = [0usize; 2];
        for (i, &l) in self.proj.logits.iter().enumerate() {
            if self.is_test[i] && hard(l) {
                pos[usize::from(sens[i])] += 1;
            }
        }
        self.test_pos = pos;
        if self.test_count.contains(&0) {
            return Err(Error::EmptyGroup("a sensitive group has no test nodes".into()));
        }
        self.objective = self.objective_from(pos);
        let labels = self.graph.labels();
        let mut loss = 0.0;
        for &i in &self.train {
            loss += bce_term(sigmoid(self.proj.logits[i]), labels[i].ok_or(Error::Unlabeled(i))?);
        }
        self.loss = loss / self.train.len() as f64;
        Ok(())
    }

    fn objective_from(&self, pos: [usize; 2]) -> f64 {
        (pos[0] as f64 / self.test_count[0] as f64 - pos[1] as f64 / self.test_count[1] as f64).abs()
    }

    /// Train cross-entropy `L(Aᵗ)` under the current θ.
    pub fn loss(&self) -> f64 {
        self.loss
    }

    /// Attacker objective `L_f(Aᵗ)` under the current θ.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn fast(&self) -> &FastState {
        &self.fast
    }

    pub fn logits(&self) -> &[f64] {
        &self.proj.logits
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::Dimension("theta length changed".into()));
        }
        self.theta = theta;
        self.refresh()
    }

    /// `(ΔL, ΔL_f)` of flipping `pair`, from the incremental logits.
    pub fn flip_deltas(&self, pair: Pair, buf: &mut Vec<(usize, f64)>) -> Result<(f64, f64)> {
        self.fast.flip_logits(pair, &self.proj, buf)?;
        let sens = self.graph.sensitive();
        let labels = self.graph.labels();
        let mut pos = self.test_pos;
        let mut dl = 0.0;
        for &(i, new_logit) in buf.iter() {
            let old_logit = self.proj.logits[i];
            if self.is_test[i] {
                let s = usize::from(sens[i]);
                match (hard(old_logit), hard(new_logit)) {
                    (false, true) => pos[s] += 1,
                    (true, false) => pos[s] -= 1,
                    _ => {}
                }
            }
            if self.is_train[i] {
                let y = labels[i].ok_or(Error::Unlabeled(i))?;
                dl += bce_term(sigmoid(new_logit), y) - bce_term(sigmoid(old_logit), y);
            }
        }
        Ok((dl / self.train.len() as f64, self.objective_from(pos) - self.objective))
    }

    /// Scores every candidate; with `constrained`, penalizes `|ΔL|` by the
    /// projection coefficient `c = pᵀq / ‖p‖²` (zero when `p = 0`).
    pub fn score_candidates(&self, candidates: &[Pair], constrained: bool) -> Result<ScoreRound> {
        if candidates.is_empty() {
            return Err(Error::NoCandidates);
        }
        let mut buf = Vec::new();
        let mut p = Vec::with_capacity(candidates.len());
        let mut q = Vec::with_capacity(candidates.len());
        for &pair in candidates {
            let (dl, dlf) = self.flip_deltas(pair, &mut buf)?;
            p.push(dl);
            q.push(dlf);
        }
        let c = if constrained {
            let pp: f64 = p.iter().map(|x| x * x).sum();
            if pp > 0.0 {
                p.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / pp
            } else {
                0.0
            }
        } else {
            0.0
        };
        let scores = if c == 0.0 {
            q.clone()
        } else {
            q.iter().zip(&p).map(|(qi, pi)| qi - c * pi.abs()).collect()
        };
        Ok(ScoreRound {
            candidates: candidates.to_vec(),
            p,
            q,
            c,
            scores,
        })
    }

    /// Applies a flip and records it. Losses are refreshed from the caches.
    pub fn commit(&mut self, pair: Pair, delta_l: f64, delta_lf: f64, score: f64) -> Result<EdgeFlip> {
        let t = self.flips.len();
        let kind = self.fast.commit_flip(pair)?;
        self.refresh()?;
        let flip = EdgeFlip {
            u: pair.u,
            v: pair.v,
            kind,
            iteration: t,
        };
        self.flips.push(flip);
        self.trace.push(TraceRecord {
            t,
            u: pair.u,
            v: pair.v,
            kind,
            delta_lf,
            delta_l,
            score,
            lf: self.objective,
            l: self.loss,
        });
        Ok(flip)
    }

    /// Current structure as a graph with the original node data.
    pub fn to_graph(&self) -> Result<Graph> {
        self.graph.with_adjacency(self.fast.adjacency().clone())
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub graph: Graph,
    pub flips: Vec<EdgeFlip>,
    pub trace: Vec<TraceRecord>,
    pub stop: StopReason,
    pub rounds: Vec<RoundStats>,
    /// Resolved edge budget Δ.
    pub budget: usize,
    /// Resolved utility budget ε.
    pub epsilon: f64,
    pub clean_loss: f64,
    pub clean_objective: f64,
    pub theta0: Vec<f64>,
    pub theta_final: Vec<f64>,
}

impl AttackOutcome {
    pub fn candidates_evaluated(&self) -> usize {
        self.rounds.iter().map(|r| r.candidates_evaluated).sum()
    }

    pub fn final_objective(&self) -> f64 {
        self.trace.last().map_or(self.clean_objective, |r| r.lf)
    }

    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }

    pub fn rounds_csv(&self) -> String {
        let mut s = String::from("round,candidates_evaluated,ranking_time,score_time,objective\n");
        for r in &self.rounds {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.round,
                r.candidates_evaluated,
                fmt_num(r.ranking_time),
                fmt_num(r.score_time),
                fmt_num(r.objective)
            );
        }
        s
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.trace_csv().as_bytes())
    }

    pub fn write_flips(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(&self.flips)?.as_bytes())
    }
}

/// CSV `t,u,v,kind,delta_Lf,delta_L,score,Lf,L`, one row per committed flip.
pub fn trace_csv(trace: &[TraceRecord]) -> String {
    let mut s = String::from("t,u,v,kind,delta_Lf,delta_L,score,Lf,L\n");
    for r in trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            r.u,
            r.v,
            r.kind,
            fmt_num(r.delta_lf),
            fmt_num(r.delta_l),
            fmt_num(r.score),
            fmt_num(r.lf),
            fmt_num(r.l)
        );
    }
    s
}

/// Runs the full attack: train θ⁰ on the clean graph, then flip greedily.
pub fn run_attack(graph: &Graph, cfg: &AttackConfig) -> Result<AttackOutcome> {
    cfg.validate()?;
    let scfg = cfg.surrogate_config();
    let fast = FastState::new(graph);
    let theta0 = train_on_features(fast.features(), graph, &scfg, scfg.epochs, None)?.theta;
    run_attack_with_theta(graph, cfg, theta0)
}

/// Runs the flip loop from a given initial θ (no initial training).
pub fn run_attack_with_theta(graph: &Graph, cfg: &AttackConfig, theta0: Vec<f64>) -> Result<AttackOutcome> {
    cfg.validate()?;
    let scfg = cfg.surrogate_config();
    let budget = cfg.budget.resolve(graph.edge_count())?;
    let limit = cfg.candidates.resolve(graph.node_count())?;
    let mut state = AttackState::new(graph, theta0.clone())?;
    let clean_loss = state.loss();
    let clean_objective = state.objective();
    let epsilon = cfg.utility_budget.resolve(clean_loss)?;

    let mut flipped: HashSet<Pair> = HashSet::new();
    let mut rounds = Vec::new();
    let mut stop = StopReason::BudgetExhausted;

    'rounds: for t in 0..budget {
        let t0 = Instant::now();
        let built = build_candidates(state.fast(), state.logits(), limit, &flipped);
        let ranking_time = t0.elapsed().as_secs_f64();
        let (candidates, rstats) = match built {
            Ok(c) => c,
            Err(Error::NoCandidates) => {
                stop = StopReason::NoCandidates;
                break;
            }
            Err(e) => return Err(e),
        };
        let t1 = Instant::now();
        let round = state.score_candidates(&candidates, cfg.constrained)?;
        let score_time = t1.elapsed().as_secs_f64();
        let mut stats = RoundStats {
            round: t,
            candidates_evaluated: candidates.len(),
            pairs_ranked: rstats.pairs_scanned,
            ranking_time,
            score_time,
            objective: state.objective(),
        };

        let mut chosen = None;
        let mut saw_budget_violation = false;
        for idx in round.ranking() {
            let score = round.scores[idx];
            if score < 0.0 {
                break;
            }
            let next_loss = state.loss() + round.p[idx];
            if (next_loss - clean_loss).abs() <= epsilon {
                chosen = Some(idx);
                break;
            }
            saw_budget_violation = true;
        }
        let Some(idx) = chosen else {
            stats.objective = state.objective();
            rounds.push(stats);
            stop = if saw_budget_violation {
                StopReason::UtilityBudget
            } else {
                StopReason::NoImprovement
            };
            break 'rounds;
        };

        let pair = round.candidates[idx];
        state.commit(pair, round.p[idx], round.q[idx], round.scores[idx])?;
        flipped.insert(pair);

        if cfg.mode == Mode::Poisoning {
            let warm = state.theta().to_vec();
            let retrained = train_on_features(state.fast().features(), graph, &scfg, cfg.retrain_epochs, Some(&warm))?;
            state.set_theta(retrained.theta)?;
        }
        stats.objective = state.objective();
        rounds.push(stats);
    }

    Ok(AttackOutcome {
        graph: state.to_graph()?,
        flips: state.flips.clone(),
        trace: state.trace.clone(),
        stop,
        rounds,
        budget,
        epsilon,
        clean_loss,
        clean_objective,
        theta0,
        theta_final: state.theta().to_vec(),
    })
}
