use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairattack_core::attack::Mode;
use fairattack_core::experiment::{self, AttackMethod, AttackSummary, ExperimentConfig};
use fairattack_core::fast::CandidateLimit;
use fairattack_core::graph::write_atomic;
use fairattack_core::sbm::{generate_sbm, SbmConfig};
use fairattack_core::verify::verify_theorems;
use fairattack_core::{load_graph, EdgeFlip};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] fairattack_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "fairattack", version, about = "Fairness attacks on graph node classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-block graph.
    Gen(GenArgs),
    /// Attack a graph and write the perturbed graph, flips and trace.
    Attack(RunArgs),
    /// Train victims on the clean and attacked graphs and report metrics.
    Evaluate(RunArgs),
    /// Numerically check the fairness bounds, the projection step and the
    /// gradient-sign witness.
    VerifyTheorems(VerifyArgs),
    /// Time the attack across candidate-set sizes.
    Benchmark(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    /// JSON generator settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    homophily: Option<f64>,
    #[arg(long)]
    avg_degree: Option<f64>,
    #[arg(long)]
    label_noise: Option<f64>,
    #[arg(long)]
    sensitive_shift: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_method)]
    method: Option<AttackMethod>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random configurations for the bound sweep.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    /// Candidate-set sizes: a fraction in (0, 1], a count, or `all`.
    #[arg(long = "a", value_parser = parse_limit, required = true, num_args = 1..)]
    limits: Vec<CandidateLimit>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_method(s: &str) -> Result<AttackMethod, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unknown method `{s}` (greedy, greedy-unconstrained, random, fagnn)"))
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| format!("unknown mode `{s}` (evasion, poisoning)"))
}

fn parse_limit(s: &str) -> Result<CandidateLimit, String> {
    if s == "all" {
        return Ok(CandidateLimit::All);
    }
    if let Ok(k) = s.parse::<usize>() {
        return Ok(CandidateLimit::Count(k));
    }
    match s.parse::<f64>() {
        Ok(f) if f > 0.0 && f <= 1.0 => Ok(CandidateLimit::Fraction(f)),
        _ => Err(format!("`{s}` is not `all`, a count, or a fraction in (0, 1]")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(fairattack_core::Error::from)?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn ensure_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(fairattack_core::Error::from)?;
    Ok(())
}

fn load_config(args: &RunArgs) -> CliResult<ExperimentConfig> {
    let mut cfg: ExperimentConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(method) = args.method {
        cfg.method = method;
    }
    if let Some(mode) = args.mode {
        cfg.attack.mode = mode;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn cmd_gen(args: GenArgs) -> CliResult {
    let mut cfg: SbmConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SbmConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = args.$f { cfg.$f = v; })* };
    }
    set!(
        n,
        feature_dim,
        homophily,
        avg_degree,
        label_noise,
        sensitive_shift,
        seed
    );
    let graph = generate_sbm(&cfg).map_err(|e| match e {
        fairattack_core::Error::InvalidParameter(m) => CliError::Config(m),
        other => CliError::Runtime(other),
    })?;
    ensure_dir(&args.output_dir)?;
    graph.save(&args.output_dir.join("nodes.csv"), &args.output_dir.join("edges.tsv"))?;
    write_json(&args.output_dir.join("generator.json"), &cfg)?;
    println!(
        "generated {} nodes, {} edges in {}",
        graph.node_count(),
        graph.edge_count(),
        args.output_dir.display()
    );
    Ok(())
}

fn cmd_attack(args: RunArgs) -> CliResult {
    let cfg = load_config(&args)?;
    let graph = cfg.load_dataset()?;
    let acfg = cfg.attack_config();
    let out = experiment::run_method(&graph, cfg.method, &acfg)?;
    let dir = &args.output_dir;
    ensure_dir(dir)?;
    out.graph
        .save(&dir.join("attacked_nodes.csv"), &dir.join("attacked_edges.tsv"))?;
    write_json(&dir.join("flips.json"), &out.flips)?;
    write_json(&dir.join("attack_summary.json"), &out.summary)?;
    write_json(&dir.join("config.json"), &cfg)?;
    if let Some(csv) = out.trace_csv() {
        write_atomic(&dir.join("trace.csv"), csv.as_bytes())?;
    }
    println!(
        "{} flips (budget {}), stop: {:?}",
        out.summary.flips, out.summary.budget, out.summary.stop
    );
    Ok(())
}

fn cmd_evaluate(args: RunArgs) -> CliResult {
    let cfg = load_config(&args)?;
    let dir = &args.output_dir;
    let clean = cfg.load_dataset()?;
    let attacked = load_graph(&dir.join("attacked_nodes.csv"), &dir.join("attacked_edges.tsv"))?;
    let flips: Vec<EdgeFlip> = read_runtime_json(&dir.join("flips.json"))?;
    let summary: AttackSummary = read_runtime_json(&dir.join("attack_summary.json"))?;
    let report = experiment::evaluate(&clean, &attacked, cfg.attack.mode, &cfg.victims, summary, &flips)?;
    write_json(&dir.join("report.json"), &report)?;
    write_atomic(&dir.join("report.csv"), report.rows_csv().as_bytes())?;
    write_atomic(&dir.join("per_seed.csv"), report.per_seed_csv().as_bytes())?;
    print!("{}", report.rows_csv());
    Ok(())
}

/// Attack artifacts are outputs of an earlier run, so problems with them
/// are runtime failures rather than configuration errors.
fn read_runtime_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(fairattack_core::Error::from)?;
    Ok(serde_json::from_str(&text).map_err(fairattack_core::Error::from)?)
}

fn cmd_verify(args: VerifyArgs) -> CliResult {
    if args.trials == 0 {
        return Err(CliError::Config("--trials must be >= 1".into()));
    }
    let report = verify_theorems(args.seed, args.trials)?;
    ensure_dir(&args.output_dir)?;
    write_json(&args.output_dir.join("theorems.json"), &report)?;
    let b = &report.bounds;
    println!("bound sweep: {} configurations", b.trials);
    println!("  demographic parity <= TV: {}/{}", b.dp_pass, b.trials);
    println!("  Wasserstein <= TV:        {}/{}", b.w_pass, b.trials);
    println!(
        "  Wasserstein <= TV (raw samples, informational): {}/{}",
        b.w_samples_pass, b.trials
    );
    println!("  MI <= TV (conditioned):   {}/{}", b.mi_full_pass, b.mi_full_condition);
    println!(
        "projection: max error {:.3e}, max violation {:.3e}",
        report.projection.max_error, report.projection.max_constraint_violation
    );
    println!("gradient-sign witness found: {}", report.witness.witness.is_some());
    if report.passed() {
        Ok(())
    } else {
        Err(fairattack_core::Error::Invariant("theorem checks failed".into()).into())
    }
}

#[derive(Serialize)]
struct BenchSummary<'a> {
    rows: &'a [experiment::BenchmarkRow],
}

fn cmd_benchmark(args: BenchArgs) -> CliResult {
    for l in &args.limits {
        if let CandidateLimit::Count(0) = l {
            return Err(CliError::Config("candidate count must be >= 1".into()));
        }
    }
    let mut cfg: ExperimentConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let graph = cfg.load_dataset()?;
    let rows = experiment::benchmark(&graph, &cfg.attack_config(), &args.limits)?;
    ensure_dir(&args.output_dir)?;
    let mut csv = String::from("a,rounds,flips,candidates_evaluated,wall_time,final_objective\n");
    for (i, r) in rows.iter().enumerate() {
        let a = match r.candidates {
            CandidateLimit::All => "all".to_owned(),
            CandidateLimit::Count(k) => k.to_string(),
            CandidateLimit::Fraction(f) => f.to_string(),
        };
        csv.push_str(&format!(
            "{a},{},{},{},{},{}\n",
            r.rounds, r.flips, r.candidates_evaluated, r.wall_time, r.final_objective
        ));
        write_atomic(
            &args.output_dir.join(format!("rounds_{i}.csv")),
            r.rounds_csv.as_bytes(),
        )?;
    }
    write_atomic(&args.output_dir.join("benchmark.csv"), csv.as_bytes())?;
    write_json(&args.output_dir.join("benchmark.json"), &BenchSummary { rows: &rows })?;
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::VerifyTheorems(a) => cmd_verify(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
