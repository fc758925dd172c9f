//! End-to-end experiments: dataset, attack, victim training and the
//! clean-versus-attacked comparison under the evasion or poisoning protocol.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attack::{run_attack, run_attack_with_theta, trace_csv, AttackConfig, Mode, StopReason, TraceRecord};
use crate::baselines::{edge_group_breakdown, fagnn_attack, greedy_unconstrained_attack, random_attack};
use crate::error::{Error, Result};
use crate::fast::{CandidateLimit, FastState};
use crate::graph::{load_graph, EdgeFlip, Graph};
use crate::linalg::fmt_num;
use crate::metrics::MetricReport;
use crate::rng;
use crate::sbm::{generate_sbm, SbmConfig};
use crate::surrogate::train_on_features;
use crate::victim::{evaluate_victim, train_victim, VictimHyper, VictimKind};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    /// Generated; the generator seed is derived from the experiment seed.
    Sbm(SbmConfig),
    Files {
        nodes: PathBuf,
        edges: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    /// Constrained greedy attack.
    Greedy,
    GreedyUnconstrained,
    Random,
    Fagnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimSpec {
    pub kind: VictimKind,
    #[serde(default)]
    pub hyper: VictimHyper,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub dataset: DatasetSource,
    pub method: AttackMethod,
    #[serde(default)]
    pub attack: AttackConfig,
    pub victims: Vec<VictimSpec>,
    /// Root seed; graph, attack and surrogate seeds derive from it.
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.attack.validate()?;
        if self.victims.is_empty() {
            return Err(Error::InvalidParameter("at least one victim is required".into()));
        }
        for v in &self.victims {
            v.hyper.validate()?;
            if v.seeds.is_empty() {
                return Err(Error::InvalidParameter(format!("victim {:?} has no seeds", v.kind)));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Attack settings with the seed taken from the root stream.
    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            seed: rng::derive_seed(self.seed, "attack"),
            ..self.attack.clone()
        }
    }

    pub fn load_dataset(&self) -> Result<Graph> {
        match &self.dataset {
            DatasetSource::Sbm(sbm) => generate_sbm(&SbmConfig {
                seed: rng::derive_seed(self.seed, "graph"),
                ..sbm.clone()
            }),
            DatasetSource::Files { nodes, edges } => load_graph(nodes, edges),
        }
    }
}

/// Attack summary shared by every method. Greedy-only fields are `None` for
/// the random baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub method: AttackMethod,
    pub mode: Mode,
    pub budget: usize,
    pub flips: usize,
    pub stop: Option<StopReason>,
    pub epsilon: Option<f64>,
    pub clean_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub clean_objective: Option<f64>,
    pub final_objective: Option<f64>,
    pub candidates_evaluated: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct AttackArtifacts {
    pub graph: Graph,
    pub flips: Vec<EdgeFlip>,
    /// Per-iteration trace of the greedy methods.
    pub trace: Option<Vec<TraceRecord>>,
    pub summary: AttackSummary,
}

impl AttackArtifacts {
    pub fn trace_csv(&self) -> Option<String> {
        self.trace.as_deref().map(trace_csv)
    }
}

pub fn run_method(graph: &Graph, method: AttackMethod, cfg: &AttackConfig) -> Result<AttackArtifacts> {
    cfg.validate()?;
    match method {
        AttackMethod::Greedy | AttackMethod::GreedyUnconstrained => {
            let out = if method == AttackMethod::Greedy {
                run_attack(graph, cfg)?
            } else {
                greedy_unconstrained_attack(graph, cfg)?
            };
            let summary = AttackSummary {
                method,
                mode: cfg.mode,
                budget: out.budget,
                flips: out.flips.len(),
                stop: Some(out.stop),
                epsilon: Some(out.epsilon),
                clean_loss: Some(out.clean_loss),
                final_loss: Some(out.trace.last().map_or(out.clean_loss, |r| r.l)),
                clean_objective: Some(out.clean_objective),
                final_objective: Some(out.final_objective()),
                candidates_evaluated: Some(out.candidates_evaluated()),
            };
            Ok(AttackArtifacts {
                graph: out.graph,
                flips: out.flips,
                trace: Some(out.trace),
                summary,
            })
        }
        AttackMethod::Random | AttackMethod::Fagnn => {
            let budget = cfg.budget.resolve(graph.edge_count())?;
            let seed = rng::derive_seed(cfg.seed, "baseline");
            let out = if method == AttackMethod::Random {
                random_attack(graph, budget, seed)?
            } else {
                fagnn_attack(graph, budget, seed)?
            };
            Ok(AttackArtifacts {
                summary: AttackSummary {
                    method,
                    mode: cfg.mode,
                    budget,
                    flips: out.flips.len(),
                    stop: None,
                    epsilon: None,
                    clean_loss: None,
                    final_loss: None,
                    clean_objective: None,
                    final_objective: None,
                    candidates_evaluated: None,
                },
                graph: out.graph,
                flips: out.flips,
                trace: None,
            })
        }
    }
}

/// Mean and sample standard deviation over the seeds where a metric exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let xs: Vec<f64> = values.into_iter().flatten().collect();
        if xs.is_empty() {
            return Self {
                mean: None,
                std: None,
                count: 0,
            };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean: Some(mean),
            std: Some(std),
            count: xs.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphState {
    Clean,
    Attacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub victim: VictimKind,
    pub graph: GraphState,
    pub acc: Stat,
    pub auc: Stat,
    pub delta_dp: Stat,
    pub delta_eo: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub victim: VictimKind,
    pub seed: u64,
    pub clean: MetricReport,
    pub attacked: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeGroupShares {
    pub ee: f64,
    pub ed: f64,
    pub de: f64,
    pub dd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub attack: AttackSummary,
    pub rows: Vec<ReportRow>,
    pub per_seed: Vec<SeedRecord>,
    /// Percentages of flipped pairs per label/sensitive pattern.
    pub edge_groups: EdgeGroupShares,
}

impl ExperimentReport {
    pub fn validate(&self) -> Result<()> {
        for row in &self.rows {
            for st in [row.acc, row.auc, row.delta_dp, row.delta_eo] {
                if st.std.is_some_and(|s| !(s >= 0.0)) {
                    return Err(Error::Invariant("negative standard deviation".into()));
                }
            }
        }
        for r in &self.per_seed {
            r.clean.validate()?;
            r.attacked.validate()?;
        }
        let g = &self.edge_groups;
        let total = g.ee + g.ed + g.de + g.dd;
        if self.attack.flips > 0 && total != 0.0 && (total - 100.0).abs() > 0.1 {
            return Err(Error::Invariant(format!("edge-group shares sum to {total}")));
        }
        Ok(())
    }

    /// One line per victim and graph state.
    pub fn rows_csv(&self) -> String {
        let mut s =
            String::from("victim,graph,acc_mean,acc_std,auc_mean,auc_std,dp_mean,dp_std,eo_mean,eo_std,seeds\n");
        let opt = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                serde_plain(&r.victim),
                serde_plain(&r.graph),
                opt(r.acc.mean),
                opt(r.acc.std),
                opt(r.auc.mean),
                opt(r.auc.std),
                opt(r.delta_dp.mean),
                opt(r.delta_dp.std),
                opt(r.delta_eo.mean),
                opt(r.delta_eo.std),
                r.acc.count
            );
        }
        s
    }

    /// Raw per-seed metrics.
    pub fn per_seed_csv(&self) -> String {
        let mut s = String::from("victim,seed,graph,acc,auc,delta_dp,delta_eo\n");
        let opt = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
        for r in &self.per_seed {
            for (state, m) in [("clean", &r.clean), ("attacked", &r.attacked)] {
                let _ = writeln!(
                    s,
                    "{},{},{state},{},{},{},{}",
                    serde_plain(&r.victim),
                    r.seed,
                    opt(m.acc),
                    opt(m.auc),
                    opt(m.delta_dp),
                    opt(m.delta_eo)
                );
            }
        }
        s
    }
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Trains every victim seed and scores it on the clean and attacked graphs.
///
/// Evasion: one model per seed, trained on the clean graph, evaluated on
/// both graphs with fixed weights. Poisoning: one model trained on each
/// graph, each evaluated on the graph it was trained on.
pub fn evaluate(
    clean: &Graph,
    attacked: &Graph,
    mode: Mode,
    victims: &[VictimSpec],
    attack: AttackSummary,
    flips: &[EdgeFlip],
) -> Result<ExperimentReport> {
    if clean.node_count() != attacked.node_count() || clean.feature_dim() != attacked.feature_dim() {
        return Err(Error::Dimension("clean and attacked graphs differ in shape".into()));
    }
    let test = clean.test_nodes();
    let mut rows = Vec::new();
    let mut per_seed = Vec::new();
    for spec in victims {
        let mut records = Vec::new();
        for &seed in &spec.seeds {
            let model = train_victim(clean, spec.kind, &spec.hyper, seed)?;
            let clean_report = evaluate_victim(&model, clean, &test, "test")?;
            let attacked_report = match mode {
                Mode::Evasion => {
                    let hash = model.weight_hash();
                    let r = evaluate_victim(&model, attacked, &test, "test")?;
                    if model.weight_hash() != hash {
                        return Err(Error::Invariant("victim weights changed during evaluation".into()));
                    }
                    r
                }
                Mode::Poisoning => {
                    let retrained = train_victim(attacked, spec.kind, &spec.hyper, seed)?;
                    evaluate_victim(&retrained, attacked, &test, "test")?
                }
            };
            records.push(SeedRecord {
                victim: spec.kind,
                seed,
                clean: clean_report,
                attacked: attacked_report,
            });
        }
        for state in [GraphState::Clean, GraphState::Attacked] {
            let pick = |r: &SeedRecord| match state {
                GraphState::Clean => r.clean.clone(),
                GraphState::Attacked => r.attacked.clone(),
            };
            let reports: Vec<MetricReport> = records.iter().map(pick).collect();
            rows.push(ReportRow {
                victim: spec.kind,
                graph: state,
                acc: Stat::of(reports.iter().map(|m| m.acc)),
                auc: Stat::of(reports.iter().map(|m| m.auc)),
                delta_dp: Stat::of(reports.iter().map(|m| m.delta_dp)),
                delta_eo: Stat::of(reports.iter().map(|m| m.delta_eo)),
            });
        }
        per_seed.extend(records);
    }
    let [ee, ed, de, dd] = edge_group_breakdown(clean, flips);
    let report = ExperimentReport {
        mode,
        attack,
        rows,
        per_seed,
        edge_groups: EdgeGroupShares { ee, ed, de, dd },
    };
    report.validate()?;
    Ok(report)
}

/// Generates or loads the dataset, attacks it and evaluates every victim.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Graph, AttackArtifacts, ExperimentReport)> {
    cfg.validate()?;
    let graph = cfg.load_dataset()?;
    let acfg = cfg.attack_config();
    let artifacts = run_method(&graph, cfg.method, &acfg)?;
    let report = evaluate(
        &graph,
        &artifacts.graph,
        acfg.mode,
        &cfg.victims,
        artifacts.summary.clone(),
        &artifacts.flips,
    )?;
    Ok((graph, artifacts, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub candidates: CandidateLimit,
    pub rounds: usize,
    pub flips: usize,
    pub candidates_evaluated: usize,
    pub wall_time: f64,
    pub final_objective: f64,
    /// Per-round CSV `round,candidates_evaluated,ranking_time,score_time,objective`.
    #[serde(skip)]
    pub rounds_csv: String,
}

/// Runs the greedy attack once per candidate limit from a shared initial θ.
pub fn benchmark(graph: &Graph, cfg: &AttackConfig, limits: &[CandidateLimit]) -> Result<Vec<BenchmarkRow>> {
    cfg.validate()?;
    if limits.is_empty() {
        return Err(Error::InvalidParameter(
            "benchmark needs at least one candidate limit".into(),
        ));
    }
    let scfg = cfg.surrogate_config();
    let fast = FastState::new(graph);
    let theta0 = train_on_features(fast.features(), graph, &scfg, scfg.epochs, None)?.theta;
    let mut rows = Vec::with_capacity(limits.len());
    for &limit in limits {
        let run_cfg = AttackConfig {
            candidates: limit,
            ..cfg.clone()
        };
        let t = Instant::now();
        let out = run_attack_with_theta(graph, &run_cfg, theta0.clone())?;
        rows.push(BenchmarkRow {
            candidates: limit,
            rounds: out.rounds.len(),
            flips: out.flips.len(),
            candidates_evaluated: out.candidates_evaluated(),
            wall_time: t.elapsed().as_secs_f64(),
            final_objective: out.final_objective(),
            rounds_csv: out.rounds_csv(),
        });
    }
    Ok(rows)
}
