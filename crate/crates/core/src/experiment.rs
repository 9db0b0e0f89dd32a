//! Seeded experiment and ablation-sweep runners with CSV/JSON persistence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{self, AugmentSpec, AugmentationReport};
use crate::contrastive::{self, Epsilon, SiameseClassifier};
use crate::data::{self, fmt_f64, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::estimators::{self, BaseLearnerSpec, MetaLearner};
use crate::imputers::{ImputerKind, KernelKind};
use crate::metrics;
use crate::rng::Seed;
use crate::synthetic::{self, Assignment, CovariateSource, IhdpStyleGenSpec, LinearGenSpec, TwinsStyleGenSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub n: usize,
    pub d: usize,
    pub noise_sd: f64,
    pub assignment: Assignment,
    /// Defaults to all 0.5.
    pub beta0: Option<Vec<f64>>,
    /// Defaults to all 0.3.
    pub beta1: Option<Vec<f64>>,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            n: 1500,
            d: 10,
            noise_sd: 0.1,
            assignment: Assignment::Logistic,
            beta0: None,
            beta1: None,
        }
    }
}

impl GeneratorParams {
    pub fn to_spec(&self, seed: u64) -> LinearGenSpec {
        let mut spec = LinearGenSpec::new(self.n, self.d, seed);
        spec.noise_sd = self.noise_sd;
        spec.assignment = self.assignment;
        if let Some(b) = &self.beta0 {
            spec.beta0 = b.clone();
        }
        if let Some(b) = &self.beta1 {
            spec.beta1 = b.clone();
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemiSyntheticParams {
    /// CSV of real covariates (`x_*`, `t`, `y` columns); standard-normal
    /// rows of size `n × d` when absent.
    pub covariates: Option<PathBuf>,
    pub n: usize,
    pub d: usize,
    pub noise_sd: Option<f64>,
    pub omega: f64,
    pub coef_sd: f64,
}

impl Default for SemiSyntheticParams {
    fn default() -> Self {
        SemiSyntheticParams {
            covariates: None,
            n: 747,
            d: 25,
            noise_sd: None,
            omega: 4.0,
            coef_sd: 1.0,
        }
    }
}

impl SemiSyntheticParams {
    fn source(&self) -> Result<CovariateSource> {
        Ok(match &self.covariates {
            Some(path) => CovariateSource::Supplied(data::load_csv(path, false)?),
            None => CovariateSource::Gaussian { n: self.n, d: self.d },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Linear(GeneratorParams),
    Nonlinear(GeneratorParams),
    Ihdp(SemiSyntheticParams),
    Twins(SemiSyntheticParams),
    Csv { path: PathBuf, ground_truth: bool },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Linear(GeneratorParams::default())
    }
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::Linear(_) => "linear".into(),
            DatasetSpec::Nonlinear(_) => "nonlinear".into(),
            DatasetSpec::Ihdp(_) => "ihdp".into(),
            DatasetSpec::Twins(_) => "twins".into(),
            DatasetSpec::Csv { path, .. } => path
                .file_stem()
                .map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned()),
        }
    }

    /// Generated data for one seed. CSV data is the same for every seed.
    pub fn materialize(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::Linear(p) => synthetic::gen_linear(&p.to_spec(seed)),
            DatasetSpec::Nonlinear(p) => synthetic::gen_nonlinear(&p.to_spec(seed)),
            DatasetSpec::Ihdp(p) => {
                let mut spec = IhdpStyleGenSpec {
                    covariates: p.source()?,
                    omega: p.omega,
                    seed,
                    ..Default::default()
                };
                if let Some(sd) = p.noise_sd {
                    spec.noise_sd = sd;
                }
                synthetic::gen_ihdp_style(&spec)
            }
            DatasetSpec::Twins(p) => {
                let mut spec = TwinsStyleGenSpec {
                    covariates: p.source()?,
                    coef_sd: p.coef_sd,
                    seed,
                    ..Default::default()
                };
                if let Some(sd) = p.noise_sd {
                    spec.noise_sd = sd;
                }
                synthetic::gen_twins_style(&spec)
            }
            DatasetSpec::Csv { path, ground_truth } => data::load_csv(path, *ground_truth),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub learner: MetaLearner,
    pub base: BaseLearnerSpec,
}

impl LearnerSpec {
    pub fn new(learner: MetaLearner, base: BaseLearnerSpec) -> Self {
        LearnerSpec { learner, base }
    }

    /// Parses `t/ridge`, `s_learner/knn` and similar.
    pub fn parse(s: &str) -> Result<Self> {
        let (l, b) = s
            .split_once('/')
            .ok_or_else(|| Error::spec(format!("learner {s:?} must look like `t/ridge`")))?;
        Ok(LearnerSpec::new(l.parse()?, BaseLearnerSpec::by_name(b)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub augment: AugmentSpec,
    pub learners: Vec<LearnerSpec>,
    pub seeds: Vec<u64>,
    pub outdir: PathBuf,
    pub keep_artifacts: bool,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            split: SplitSpec::default(),
            augment: AugmentSpec::default(),
            learners: vec![
                LearnerSpec::new(MetaLearner::S, BaseLearnerSpec::ridge(1e-3)),
                LearnerSpec::new(MetaLearner::T, BaseLearnerSpec::ridge(1e-3)),
            ],
            seeds: (0..10).collect(),
            outdir: PathBuf::from("results"),
            keep_artifacts: false,
            jobs: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::spec("seeds must be nonempty"));
        }
        if self.learners.is_empty() {
            return Err(Error::spec("learners must be nonempty"));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::spec("train_fraction must lie in (0, 1)"));
        }
        for l in &self.learners {
            l.base.validate()?;
        }
        self.augment.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// SHA-256 of the canonical TOML of the result-affecting fields (output
    /// location, artifact flag and thread count excluded).
    pub fn hash(&self) -> Result<String> {
        let mut canon = self.clone();
        canon.outdir = PathBuf::new();
        canon.keep_artifacts = false;
        canon.jobs = 0;
        let digest = Sha256::digest(canon.to_toml()?.as_bytes());
        Ok(digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub learner: String,
    pub base: String,
    pub augmented: bool,
    pub seed: u64,
    pub sqrt_pehe: f64,
    pub ate_error: f64,
    pub mmd_before: f64,
    pub mmd_after: f64,
    pub alpha: f64,
    pub config_hash: String,
}

pub const RESULT_COLUMNS: [&str; 11] = [
    "dataset",
    "learner",
    "base",
    "augmented",
    "seed",
    "sqrt_pehe",
    "ate_error",
    "mmd_before",
    "mmd_after",
    "alpha",
    "config_hash",
];

impl ResultRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.dataset.clone(),
            self.learner.clone(),
            self.base.clone(),
            u8::from(self.augmented).to_string(),
            self.seed.to_string(),
            fmt_f64(self.sqrt_pehe),
            fmt_f64(self.ate_error),
            fmt_f64(self.mmd_before),
            fmt_f64(self.mmd_after),
            fmt_f64(self.alpha),
            self.config_hash.clone(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanSd { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub dataset: String,
    pub learner: String,
    pub base: String,
    pub augmented: bool,
    pub n_seeds: usize,
    pub sqrt_pehe: MeanSd,
    pub ate_error: MeanSd,
    pub alpha: MeanSd,
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryCell> {
    let mut cells: BTreeMap<(String, String, String, bool), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.dataset.clone(), r.learner.clone(), r.base.clone(), r.augmented))
            .or_default()
            .push(r);
    }
    cells
        .into_iter()
        .map(|((dataset, learner, base, augmented), rs)| {
            let col = |f: fn(&ResultRow) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            SummaryCell {
                dataset,
                learner,
                base,
                augmented,
                n_seeds: rs.len(),
                sqrt_pehe: MeanSd::of(&col(|r| r.sqrt_pehe)),
                ate_error: MeanSd::of(&col(|r| r.ate_error)),
                alpha: MeanSd::of(&col(|r| r.alpha)),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub log: Vec<String>,
    pub config_hash: String,
    /// Augmented training sets per seed, kept when artifacts are requested.
    pub artifacts: Vec<(u64, augment::ProvenanceDataset)>,
}

struct SeedOutcome {
    rows: Vec<(usize, ResultRow)>,
    log: Vec<String>,
    artifact: Option<augment::ProvenanceDataset>,
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::spec(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn augment_spec_for(cfg: &ExperimentConfig, seed: u64) -> AugmentSpec {
    let mut spec = cfg.augment.clone();
    spec.seed ^= Seed(seed).derive("augment").0;
    spec
}

/// Without-augmentation cells first (no contrastive or imputation work),
/// then one augmentation and the with-augmentation cells.
fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    hash: &str,
    classifier: Option<&SiameseClassifier>,
) -> SeedOutcome {
    let mut log = Vec::new();
    let mut rows = Vec::new();
    let name = cfg.dataset.name();
    let prepared = cfg.dataset.materialize(seed).and_then(|ds| {
        let split = SplitSpec {
            seed: Seed(seed).derive("split").0 ^ cfg.split.seed,
            ..cfg.split
        };
        let (train, test) = data::split(&ds, &split)?;
        let mmd = metrics::mmd_imbalance(&train)?;
        Ok((train, test, mmd))
    });
    let (train, test, mmd_before) = match prepared {
        Ok(v) => v,
        Err(e) => {
            log.push(format!("seed={seed} phase=data error: {e}"));
            return SeedOutcome { rows, log, artifact: None };
        }
    };
    log.push(format!(
        "seed={seed} phase=data train={} test={} mmd={}",
        train.len(),
        test.len(),
        fmt_f64(mmd_before)
    ));

    let mut fit_eval = |phase: &str, ds: &Dataset, alpha: f64, mmd_after: f64, log: &mut Vec<String>| {
        for (k, l) in cfg.learners.iter().enumerate() {
            let label = format!("{}/{}", l.learner.name(), l.base.name());
            let res = estimators::fit(ds, l.learner, &l.base, seed).and_then(|m| metrics::evaluate(&m, &test));
            match res {
                Ok(ev) => {
                    log.push(format!("seed={seed} phase={phase} learner={label} sqrt_pehe={}", fmt_f64(ev.sqrt_pehe)));
                    rows.push((
                        k,
                        ResultRow {
                            dataset: name.clone(),
                            learner: l.learner.name().to_string(),
                            base: l.base.name().to_string(),
                            augmented: phase == "aug",
                            seed,
                            sqrt_pehe: ev.sqrt_pehe,
                            ate_error: ev.ate_error,
                            mmd_before,
                            mmd_after,
                            alpha,
                            config_hash: hash.to_string(),
                        },
                    ));
                }
                Err(e) => log.push(format!("seed={seed} phase={phase} learner={label} error: {e}")),
            }
        }
    };

    fit_eval("noaug", &train, 0.0, mmd_before, &mut log);

    let spec = augment_spec_for(cfg, seed);
    let report: Result<AugmentationReport> = match classifier {
        Some(clf) => augment::augment_with_classifier(&train, clf.clone(), &spec),
        None => augment::augment(&train, &spec),
    };
    let mut artifact = None;
    match report.and_then(|r| metrics::mmd_imbalance(&r.augmented).map(|m| (r, m))) {
        Ok((report, mmd_after)) => {
            log.push(format!(
                "seed={seed} phase=aug contrastive+impute added={} alpha={} mmd={}",
                report.added.len(),
                fmt_f64(report.alpha),
                fmt_f64(mmd_after)
            ));
            fit_eval("aug", &report.augmented, report.alpha, mmd_after, &mut log);
            if cfg.keep_artifacts {
                artifact = Some(augment::mark_provenance(&report));
            }
        }
        Err(e) => log.push(format!("seed={seed} phase=aug error: {e}")),
    }
    SeedOutcome { rows, log, artifact }
}

fn collect(outcomes: Vec<(u64, SeedOutcome)>, hash: String) -> ExperimentOutcome {
    let mut keyed = Vec::new();
    let mut log = Vec::new();
    let mut artifacts = Vec::new();
    for (seed, o) in outcomes {
        keyed.extend(o.rows);
        log.extend(o.log);
        if let Some(a) = o.artifact {
            artifacts.push((seed, a));
        }
    }
    keyed.sort_by(|(ka, a), (kb, b)| (a.seed, *ka, a.augmented).cmp(&(b.seed, *kb, b.augmented)));
    ExperimentOutcome {
        rows: keyed.into_iter().map(|(_, r)| r).collect(),
        log,
        config_hash: hash,
        artifacts,
    }
}

/// Runs every `(seed, learner, augmented)` cell. Cell failures are logged
/// and skipped.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let outcomes = with_pool(cfg.jobs, || {
        cfg.seeds
            .par_iter()
            .map(|&s| (s, run_seed(cfg, s, &hash, None)))
            .collect::<Vec<_>>()
    })?;
    Ok(collect(outcomes, hash))
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    w.write_record(RESULT_COLUMNS).map_err(|e| Error::Serde(e.to_string()))?;
    for r in rows {
        w.write_record(r.record()).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends rows, writing the header when the file is new or empty.
pub fn append_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(RESULT_COLUMNS).map_err(|e| Error::Serde(e.to_string()))?;
    }
    for r in rows {
        w.write_record(r.record()).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Serde(e.to_string()))?;
        let bad = |m: &str| Error::Parse { row: i + 1, message: m.to_string() };
        let f = |k: usize| rec.get(k).ok_or_else(|| bad("missing column"));
        let num = |k: usize| f(k)?.parse::<f64>().map_err(|_| bad("invalid number"));
        rows.push(ResultRow {
            dataset: f(0)?.to_string(),
            learner: f(1)?.to_string(),
            base: f(2)?.to_string(),
            augmented: f(3)? == "1",
            seed: f(4)?.parse().map_err(|_| bad("invalid seed"))?,
            sqrt_pehe: num(5)?,
            ate_error: num(6)?,
            mmd_before: num(7)?,
            mmd_after: num(8)?,
            alpha: num(9)?,
            config_hash: f(10)?.to_string(),
        });
    }
    Ok(rows)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `results.csv`, `summary.json`, `run.log` and, when requested,
/// `artifacts/seed_<s>_augmented.csv` under `outdir`.
pub fn write_outputs(outcome: &ExperimentOutcome, outdir: &Path) -> Result<()> {
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    write_results_csv(&outcome.rows, &outdir.join("results.csv"))?;
    let summary = serde_json::json!({
        "config_hash": outcome.config_hash,
        "cells": summarize(&outcome.rows),
    });
    write_text(&outdir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    let mut log = outcome.log.join("\n");
    log.push('\n');
    write_text(&outdir.join("run.log"), &log)?;
    if !outcome.artifacts.is_empty() {
        let dir = outdir.join("artifacts");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (seed, a) in &outcome.artifacts {
            a.save_csv(dir.join(format!("seed_{seed}_augmented.csv")))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "K")]
    K,
    #[serde(rename = "radius")]
    Radius,
    #[serde(rename = "epsilon")]
    Epsilon,
    #[serde(rename = "kernel")]
    Kernel,
    #[serde(rename = "imputer")]
    Imputer,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(SweepParam::K),
            "radius" | "R" => Ok(SweepParam::Radius),
            "epsilon" | "eps" => Ok(SweepParam::Epsilon),
            "kernel" => Ok(SweepParam::Kernel),
            "imputer" => Ok(SweepParam::Imputer),
            other => Err(Error::spec(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::K => "K",
            SweepParam::Radius => "radius",
            SweepParam::Epsilon => "epsilon",
            SweepParam::Kernel => "kernel",
            SweepParam::Imputer => "imputer",
        }
    }

    /// Applies one grid value. Epsilon values ending in `%` are percentiles.
    pub fn apply(self, cfg: &mut ExperimentConfig, value: &str) -> Result<()> {
        let bad = || Error::spec(format!("invalid {} value {value:?}", self.name()));
        let aug = &mut cfg.augment;
        match self {
            SweepParam::K => aug.min_neighbors = value.parse().map_err(|_| bad())?,
            SweepParam::Radius => aug.query_radius = Some(value.parse().map_err(|_| bad())?),
            SweepParam::Epsilon => {
                aug.contrastive.epsilon = match value.strip_suffix('%') {
                    Some(p) => Epsilon::Percentile(p.parse().map_err(|_| bad())?),
                    None => Epsilon::Absolute(value.parse().map_err(|_| bad())?),
                }
            }
            SweepParam::Kernel => {
                aug.imputer = ImputerKind::Gp;
                aug.kernel.kind = value.parse::<KernelKind>()?;
            }
            SweepParam::Imputer => aug.imputer = value.parse()?,
        }
        cfg.validate()
    }

    /// Grid values that leave classifier training unchanged.
    fn shares_classifier(self) -> bool {
        matches!(self, SweepParam::K | SweepParam::Radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<String>,
    pub base: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// `(value, row)` pairs in grid order.
    pub rows: Vec<(String, ResultRow)>,
    pub log: Vec<String>,
}

/// One experiment per grid value. For `K` and `radius` the classifier is
/// trained once per seed and reused across the grid.
pub fn run_sweep(sweep: &SweepSpec) -> Result<SweepOutcome> {
    if sweep.values.is_empty() {
        return Err(Error::spec("sweep grid must be nonempty"));
    }
    sweep.base.validate()?;
    let configs: Vec<ExperimentConfig> = sweep
        .values
        .iter()
        .map(|v| {
            let mut c = sweep.base.clone();
            sweep.param.apply(&mut c, v)?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let base = &sweep.base;
    let per_seed = with_pool(base.jobs, || {
        base.seeds
            .par_iter()
            .map(|&seed| {
                let shared = if sweep.param.shares_classifier() {
                    base.dataset
                        .materialize(seed)
                        .and_then(|ds| {
                            let split = SplitSpec {
                                seed: Seed(seed).derive("split").0 ^ base.split.seed,
                                ..base.split
                            };
                            Ok(data::split(&ds, &split)?.0)
                        })
                        .and_then(|train| contrastive::fit(&train, &augment_spec_for(base, seed).effective_contrastive()))
                        .ok()
                } else {
                    None
                };
                configs
                    .iter()
                    .map(|c| {
                        let hash = c.hash().unwrap_or_default();
                        run_seed(c, seed, &hash, shared.as_ref())
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    })?;
    let mut rows = Vec::new();
    let mut log = Vec::new();
    for (vi, value) in sweep.values.iter().enumerate() {
        let outcomes = base
            .seeds
            .iter()
            .zip(&per_seed)
            .map(|(&s, v)| {
                let o = &v[vi];
                (
                    s,
                    SeedOutcome {
                        rows: o.rows.clone(),
                        log: o.log.clone(),
                        artifact: None,
                    },
                )
            })
            .collect();
        let outcome = collect(outcomes, String::new());
        log.extend(outcome.log.into_iter().map(|l| format!("{}={value} {l}", sweep.param.name())));
        rows.extend(outcome.rows.into_iter().map(|r| (value.clone(), r)));
    }
    Ok(SweepOutcome { rows, log })
}

pub fn write_sweep(outcome: &SweepOutcome, param: SweepParam, outdir: &Path) -> Result<()> {
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let path = outdir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Serde(e.to_string()))?;
    let mut header = vec!["param", "value"];
    header.extend(RESULT_COLUMNS);
    w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
    for (value, r) in &outcome.rows {
        let mut rec = vec![param.name().to_string(), value.clone()];
        rec.extend(r.record());
        w.write_record(&rec).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let mut log = outcome.log.join("\n");
    log.push('\n');
    write_text(&outdir.join("run.log"), &log)
}
