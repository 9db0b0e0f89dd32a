use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cocoa::augment::{self, AugmentSpec};
use cocoa::contrastive::Epsilon;
use cocoa::data::{self, Dataset};
use cocoa::estimators::{self, BaseLearnerSpec, CateModel, MetaLearner};
use cocoa::experiment::{
    self, DatasetSpec, ExperimentConfig, GeneratorParams, ResultRow, SemiSyntheticParams, SweepParam, SweepSpec,
};
use cocoa::imputers::{ImputerKind, KernelKind};
use cocoa::metrics;
use cocoa::synthetic::Assignment;
use cocoa::theory::{self, BoundCheckConfig, TheoryCheckResult};
use cocoa::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "cocoa", version, about = "Contrastive counterfactual augmentation for CATE estimation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Random seed (for `experiment` and `sweep`, runs this single seed)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment configuration (TOML); flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,
    /// Worker threads, 0 for all cores
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground-truth potential outcomes
    Generate(GenerateArgs),
    /// Augment a factual dataset with imputed counterfactuals
    Augment(AugmentArgs),
    /// Fit a CATE model
    Train(TrainArgs),
    /// Evaluate a CATE model on a dataset with ground truth
    Evaluate(EvaluateArgs),
    /// Run the with/without augmentation experiment over all seeds
    Experiment(ExperimentArgs),
    /// Run one experiment per value of an augmentation parameter
    Sweep(SweepArgs),
    /// Empirical checks of the theoretical guarantees
    TheoryCheck(TheoryArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Linear,
    Nonlinear,
    Ihdp,
    Twins,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "linear")]
    dataset: GenKind,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Randomized assignment with this treatment probability instead of the
    /// covariate-dependent default
    #[arg(long)]
    rct: Option<f64>,
    /// Real covariates for the semi-synthetic generators
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentOpts {
    /// Minimum number of neighbors K
    #[arg(long)]
    k: Option<usize>,
    /// Decision radius used to select neighbors (0 and inf allowed)
    #[arg(long)]
    radius: Option<f64>,
    /// Outcome similarity threshold; a trailing % makes it a percentile
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    imputer: Option<String>,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    length_scale: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    /// JSON report path, defaults to the output path with a .json extension
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    opts: AugmentOpts,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "t")]
    learner: String,
    #[arg(long, default_value = "ridge")]
    base: String,
    /// Ridge penalty
    #[arg(long)]
    lambda: Option<f64>,
    /// Neighbors for the knn base learner
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, short)]
    input: PathBuf,
    /// Training set the model was fitted on; supplies alpha and the MMD
    /// columns of the results row
    #[arg(long)]
    train: Option<PathBuf>,
    /// Results CSV to append to, defaults to <outdir>/results.csv
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Comma-separated seed list
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Learners as learner/base, e.g. t/ridge,s/knn
    #[arg(long, value_delimiter = ',')]
    learners: Option<Vec<String>>,
    #[arg(long)]
    keep_artifacts: bool,
    #[command(flatten)]
    opts: AugmentOpts,
}

#[derive(Args)]
struct SweepArgs {
    /// One of K, radius, epsilon, kernel, imputer
    #[arg(long)]
    param: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Which {
    Rct,
    Neighbors,
    Bound,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, value_enum)]
    which: Which,
    /// Sample size (rct: data size, bound: training size)
    #[arg(long)]
    n: Option<usize>,
    /// Neighbor counts for the neighbors check
    #[arg(long, value_delimiter = ',', default_value = "1,10,50,200")]
    m: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 2000)]
    trials: usize,
}

enum Failure {
    Usage(String),
    Runtime(String),
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidSpec(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check) => ExitCode::from(3),
    }
}

fn run(cli: Cli) -> CliResult {
    let g = cli.global;
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &g.outdir {
        cfg.outdir = dir.clone();
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    let seed = g.seed.unwrap_or(0);
    match cli.command {
        Command::Generate(a) => generate(a, &cfg, seed),
        Command::Augment(a) => augment_cmd(a, &cfg, seed),
        Command::Train(a) => train(a, seed),
        Command::Evaluate(a) => evaluate(a, &cfg, seed),
        Command::Experiment(a) => {
            if let Some(s) = g.seed {
                cfg.seeds = vec![s];
            }
            run_experiment(a, cfg)
        }
        Command::Sweep(a) => {
            if let Some(s) = g.seed {
                cfg.seeds = vec![s];
            }
            sweep(a, cfg)
        }
        Command::TheoryCheck(a) => theory_check(a, seed),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn write_json(value: &serde_json::Value, path: &Path) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn print_json(value: &impl serde::Serialize) {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    let _ = writeln!(std::io::stdout(), "{text}");
}

/// Loads a CSV, detecting the ground-truth and provenance columns from the
/// header.
fn load(path: &Path) -> Result<(Dataset, Option<Vec<bool>>), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let header = text.lines().next().unwrap_or_default();
    let truth = header.split(',').any(|c| c.trim() == "mu0");
    Ok(data::load_csv_with_provenance(path, truth)?)
}

fn generate(a: GenerateArgs, cfg: &ExperimentConfig, seed: u64) -> CliResult {
    let spec = match a.dataset {
        GenKind::Linear | GenKind::Nonlinear => {
            let mut p = match &cfg.dataset {
                DatasetSpec::Linear(p) | DatasetSpec::Nonlinear(p) => p.clone(),
                _ => GeneratorParams::default(),
            };
            if let Some(n) = a.n {
                p.n = n;
            }
            if let Some(d) = a.d {
                p.d = d;
            }
            if let Some(s) = a.noise_sd {
                p.noise_sd = s;
            }
            if let Some(q) = a.rct {
                p.assignment = Assignment::Randomized(q);
            }
            if matches!(a.dataset, GenKind::Linear) {
                DatasetSpec::Linear(p)
            } else {
                DatasetSpec::Nonlinear(p)
            }
        }
        GenKind::Ihdp | GenKind::Twins => {
            let mut p = match &cfg.dataset {
                DatasetSpec::Ihdp(p) | DatasetSpec::Twins(p) => p.clone(),
                _ => SemiSyntheticParams::default(),
            };
            if let Some(n) = a.n {
                p.n = n;
            }
            if let Some(d) = a.d {
                p.d = d;
            }
            if a.noise_sd.is_some() {
                p.noise_sd = a.noise_sd;
            }
            if a.covariates.is_some() {
                p.covariates = a.covariates.clone();
            }
            if matches!(a.dataset, GenKind::Ihdp) {
                DatasetSpec::Ihdp(p)
            } else {
                DatasetSpec::Twins(p)
            }
        }
    };
    let ds = spec.materialize(seed)?;
    let out = match a.output {
        Some(p) => p,
        None => {
            std::fs::create_dir_all(&cfg.outdir).map_err(|e| Failure::Runtime(e.to_string()))?;
            cfg.outdir.join(format!("{}_seed{seed}.csv", spec.name()))
        }
    };
    data::save_csv(&ds, &out)?;
    let (t0, t1) = ds.group_sizes();
    eprintln!("wrote {} rows ({t0} control, {t1} treated) to {}", ds.len(), out.display());
    Ok(())
}

fn apply_augment_opts(spec: &mut AugmentSpec, o: &AugmentOpts) -> CliResult {
    if let Some(k) = o.k {
        spec.min_neighbors = k;
    }
    if let Some(r) = o.radius {
        spec.query_radius = Some(r);
    }
    if let Some(e) = &o.epsilon {
        let bad = || usage(format!("invalid epsilon {e:?}"));
        spec.contrastive.epsilon = match e.strip_suffix('%') {
            Some(q) => Epsilon::Percentile(q.parse().map_err(|_| bad())?),
            None => Epsilon::Absolute(e.parse().map_err(|_| bad())?),
        };
    }
    if let Some(i) = &o.imputer {
        spec.imputer = i.parse::<ImputerKind>()?;
    }
    if let Some(k) = &o.kernel {
        spec.kernel.kind = k.parse::<KernelKind>()?;
    }
    if let Some(l) = o.length_scale {
        spec.kernel.length_scale = l;
    }
    if let Some(j) = o.jitter {
        spec.kernel.jitter = j;
    }
    Ok(spec.validate()?)
}

fn augment_cmd(a: AugmentArgs, cfg: &ExperimentConfig, seed: u64) -> CliResult {
    let mut spec = cfg.augment.clone();
    spec.seed = seed;
    apply_augment_opts(&mut spec, &a.opts)?;
    let (ds, flags) = load(&a.input)?;
    if flags.is_some_and(|f| f.iter().any(|&b| b)) {
        return Err(usage("input already contains augmented rows"));
    }
    let report = augment::augment(&ds, &spec)?;
    augment::mark_provenance(&report).save_csv(&a.output)?;
    let counts = &report.neighbor_counts;
    let summary = json!({
        "alpha": report.alpha,
        "n_original": report.n_original(),
        "n_added": report.added.len(),
        "n_total": report.augmented.len(),
        "mmd_before": metrics::mmd_imbalance(&ds)?,
        "mmd_after": metrics::mmd_imbalance(&report.augmented)?,
        "neighbor_count_min": counts.iter().min(),
        "neighbor_count_max": counts.iter().max(),
        "neighbor_count_mean": counts.iter().sum::<usize>() as f64 / counts.len() as f64,
        "classifier_radius": report.classifier.radius,
        "seed": seed,
        "config": spec,
    });
    let report_path = a.report.unwrap_or_else(|| a.output.with_extension("json"));
    write_json(&summary, &report_path)?;
    print_json(&summary);
    Ok(())
}

fn train(a: TrainArgs, seed: u64) -> CliResult {
    let learner: MetaLearner = a.learner.parse()?;
    let mut base = BaseLearnerSpec::by_name(&a.base)?;
    match &mut base {
        BaseLearnerSpec::Ridge { lambda } => {
            if let Some(l) = a.lambda {
                *lambda = l;
            }
        }
        BaseLearnerSpec::Knn { k } => {
            if let Some(n) = a.neighbors {
                *k = n;
            }
        }
        BaseLearnerSpec::Mlp { train, .. } => {
            if let Some(e) = a.epochs {
                train.epochs = e;
            }
        }
    }
    base.validate()?;
    let (ds, _) = load(&a.input)?;
    let model = estimators::fit(&ds, learner, &base, seed)?;
    model.save(&a.model)?;
    eprintln!("fitted {}/{} on {} rows, saved to {}", learner.name(), model.base, ds.len(), a.model.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs, cfg: &ExperimentConfig, seed: u64) -> CliResult {
    let model = CateModel::load(&a.model)?;
    let (ds, _) = load(&a.input)?;
    if !ds.has_ground_truth() {
        return Err(Error::MissingGroundTruth.into());
    }
    let mut result = metrics::evaluate(&model, &ds)?;
    let (augmented, alpha, mmd_before, mmd_after) = match &a.train {
        Some(path) => {
            let (train, flags) = load(path)?;
            let flags = flags.unwrap_or_else(|| vec![false; train.len()]);
            let factual: Vec<usize> = (0..train.len()).filter(|&i| !flags[i]).collect();
            let added = train.len() - factual.len();
            (
                added > 0,
                added as f64 / train.len() as f64,
                metrics::mmd_imbalance(&train.subset(&factual))?,
                metrics::mmd_imbalance(&train)?,
            )
        }
        None => (false, 0.0, f64::NAN, f64::NAN),
    };
    result.config = Some(json!({
        "model": a.model,
        "input": a.input,
        "learner": model.learner.name(),
        "base": model.base,
        "augmented": augmented,
    }));
    let row = ResultRow {
        dataset: ds.name().to_string(),
        learner: model.learner.name().to_string(),
        base: model.base.clone(),
        augmented,
        seed,
        sqrt_pehe: result.sqrt_pehe,
        ate_error: result.ate_error,
        mmd_before,
        mmd_after,
        alpha,
        config_hash: String::new(),
    };
    let results = match a.results {
        Some(p) => p,
        None => {
            std::fs::create_dir_all(&cfg.outdir).map_err(|e| Failure::Runtime(e.to_string()))?;
            cfg.outdir.join("results.csv")
        }
    };
    experiment::append_results_csv(&[row], &results)?;
    print_json(&result);
    Ok(())
}

fn run_experiment(a: ExperimentArgs, mut cfg: ExperimentConfig) -> CliResult {
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(ls) = &a.learners {
        cfg.learners = ls.iter().map(|s| experiment::LearnerSpec::parse(s)).collect::<Result<_, _>>()?;
    }
    cfg.keep_artifacts |= a.keep_artifacts;
    apply_augment_opts(&mut cfg.augment, &a.opts)?;
    cfg.validate()?;
    let outcome = experiment::run_experiment(&cfg)?;
    experiment::write_outputs(&outcome, &cfg.outdir)?;
    print_json(&experiment::summarize(&outcome.rows));
    eprintln!("wrote {} rows to {}", outcome.rows.len(), cfg.outdir.join("results.csv").display());
    Ok(())
}

fn sweep(a: SweepArgs, mut cfg: ExperimentConfig) -> CliResult {
    let param: SweepParam = a.param.parse()?;
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    let outdir = cfg.outdir.clone();
    let spec = SweepSpec {
        param,
        values: a.values,
        base: cfg,
    };
    let outcome = experiment::run_sweep(&spec)?;
    experiment::write_sweep(&outcome, param, &outdir)?;
    eprintln!("wrote {} rows to {}", outcome.rows.len(), outdir.join("sweep.csv").display());
    Ok(())
}

fn theory_check(a: TheoryArgs, seed: u64) -> CliResult {
    let results: Vec<TheoryCheckResult> = match a.which {
        Which::Rct => {
            let n = a.n.unwrap_or(10_000);
            vec![theory::check_rct_consistency(n, seed)?, theory::check_rct_negative_control(n, seed)?]
        }
        Which::Neighbors => a
            .m
            .iter()
            .map(|&m| theory::check_neighbor_bound(&[0.0], a.epsilon, m, a.trials, seed))
            .collect::<Result<_, _>>()?,
        Which::Bound => {
            let mut cfg = BoundCheckConfig::default();
            if let Some(n) = a.n {
                cfg.n = n;
            }
            vec![theory::check_generalization_bound(&cfg, seed)?]
        }
    };
    print_json(&results);
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}
