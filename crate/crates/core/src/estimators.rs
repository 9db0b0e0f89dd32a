//! S- and T-learner CATE estimators over ridge, k-NN and MLP base learners.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, Dataset, Standardizer, Treatment};
use crate::error::{Error, Result};
use crate::linalg::{self, dot, sq_dist, SymMatrix};
use crate::metrics::Hypothesis;
use crate::neuralnet::{self, Activation, Loss, Mlp, MlpSpec, OutputActivation, TrainSpec};
use crate::rng::Seed;

const MODEL_MAGIC: &str = "COCOA-CATE 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaLearner {
    /// One model over `(x, t, t·x)`.
    S,
    /// One model per treatment arm.
    T,
}

impl MetaLearner {
    pub fn name(self) -> &'static str {
        match self {
            MetaLearner::S => "s_learner",
            MetaLearner::T => "t_learner",
        }
    }
}

impl FromStr for MetaLearner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s" | "s_learner" => Ok(MetaLearner::S),
            "t" | "t_learner" => Ok(MetaLearner::T),
            other => Err(Error::spec(format!("unknown meta-learner {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseLearnerSpec {
    Ridge { lambda: f64 },
    Knn { k: usize },
    /// Input and output widths of `mlp.layer_sizes` are set from the data.
    Mlp { mlp: MlpSpec, train: TrainSpec },
}

impl BaseLearnerSpec {
    pub fn ridge(lambda: f64) -> Self {
        BaseLearnerSpec::Ridge { lambda }
    }

    pub fn default_mlp() -> Self {
        BaseLearnerSpec::Mlp {
            mlp: MlpSpec::new(vec![0, 32, 32, 1], Activation::Relu, OutputActivation::Identity),
            train: TrainSpec {
                learning_rate: 1e-3,
                batch_size: 32,
                epochs: 100,
                ..Default::default()
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaseLearnerSpec::Ridge { .. } => "ridge",
            BaseLearnerSpec::Knn { .. } => "knn",
            BaseLearnerSpec::Mlp { .. } => "mlp",
        }
    }

    /// Ridge (λ = 1e-3), k-NN (k = 5) or the default MLP, by name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "ridge" => Ok(Self::ridge(1e-3)),
            "knn" => Ok(BaseLearnerSpec::Knn { k: 5 }),
            "mlp" => Ok(Self::default_mlp()),
            other => Err(Error::spec(format!("unknown base learner {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseLearnerSpec::Ridge { lambda } if !(*lambda >= 0.0) => Err(Error::spec("ridge lambda must be non-negative")),
            BaseLearnerSpec::Knn { k: 0 } => Err(Error::spec("knn k must be at least 1")),
            BaseLearnerSpec::Mlp { mlp, train } => {
                if mlp.layer_sizes.len() < 2 {
                    return Err(Error::spec("mlp base learner needs at least one layer"));
                }
                train.validate()
            }
            _ => Ok(()),
        }
    }
}

/// A fitted regression model `features → outcome`.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseModel {
    Ridge { intercept: f64, coef: Vec<f64> },
    Knn { k: usize, xs: Vec<Vec<f64>>, ys: Vec<f64> },
    Mlp { net: Mlp, x_std: Standardizer, y_mean: f64, y_sd: f64 },
}

impl BaseModel {
    pub fn fit(rows: &[Vec<f64>], y: &[f64], spec: &BaseLearnerSpec, seed: Seed) -> Result<Self> {
        spec.validate()?;
        if rows.is_empty() {
            return Err(Error::Empty("training rows".into()));
        }
        let p = rows[0].len();
        match spec {
            BaseLearnerSpec::Ridge { lambda } => fit_ridge(rows, y, *lambda),
            BaseLearnerSpec::Knn { k } => Ok(BaseModel::Knn {
                k: *k,
                xs: rows.to_vec(),
                ys: y.to_vec(),
            }),
            BaseLearnerSpec::Mlp { mlp, train } => {
                let x_std = Standardizer::fit(rows.iter().map(Vec::as_slice), p);
                let y_std = Standardizer::fit(y.iter().map(std::slice::from_ref), 1);
                let (y_mean, y_sd) = (y_std.mean[0], y_std.sd[0]);
                let inputs: Vec<Vec<f64>> = rows.iter().map(|r| x_std.transform(r)).collect();
                let targets: Vec<Vec<f64>> = y.iter().map(|v| vec![(v - y_mean) / y_sd]).collect();
                let mut mspec = mlp.clone();
                mspec.layer_sizes[0] = p;
                *mspec.layer_sizes.last_mut().unwrap() = 1;
                mspec.init_seed ^= seed.derive("mlp-init").0;
                let mut tspec = train.clone();
                tspec.seed ^= seed.derive("mlp-train").0;
                let net = neuralnet::train(&Mlp::new(&mspec)?, &inputs, &targets, Loss::Mse, &tspec)?.net;
                Ok(BaseModel::Mlp { net, x_std, y_mean, y_sd })
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            BaseModel::Ridge { intercept, coef } => intercept + dot(coef, row),
            BaseModel::Knn { k, xs, ys } => {
                let mut d: Vec<(f64, usize)> = xs.iter().enumerate().map(|(i, x)| (sq_dist(x, row), i)).collect();
                let k = (*k).min(d.len());
                d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d[..k].iter().map(|&(_, i)| ys[i]).sum::<f64>() / k as f64
            }
            BaseModel::Mlp { net, x_std, y_mean, y_sd } => {
                let out = net.forward(&x_std.transform(row)).expect("feature width checked by caller");
                y_mean + y_sd * out[0]
            }
        }
    }

    fn width(&self) -> usize {
        match self {
            BaseModel::Ridge { coef, .. } => coef.len(),
            BaseModel::Knn { xs, .. } => xs.first().map_or(0, Vec::len),
            BaseModel::Mlp { net, .. } => net.input_dim(),
        }
    }
}

/// Ridge regression with an unpenalized intercept, solved through centered
/// normal equations.
fn fit_ridge(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<BaseModel> {
    let n = rows.len() as f64;
    let p = rows[0].len();
    let mut x_mean = vec![0.0; p];
    for r in rows {
        for (m, v) in x_mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let y_mean = y.iter().sum::<f64>() / n;
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&x_mean).map(|(v, m)| v - m).collect())
        .collect();
    let gram: SymMatrix = linalg::gram_matrix(&centered, p);
    let mut rhs = vec![0.0; p];
    for (r, yi) in centered.iter().zip(y) {
        for (acc, v) in rhs.iter_mut().zip(r) {
            *acc += v * (yi - y_mean);
        }
    }
    let (coef, _) = linalg::solve_spd_with_jitter(&gram, &rhs, lambda)?;
    let intercept = y_mean - dot(&coef, &x_mean);
    Ok(BaseModel::Ridge { intercept, coef })
}

/// S-learner design row `(x, t, t·x)`.
pub fn s_features(x: &[f64], t: Treatment) -> Vec<f64> {
    let tv = t.as_f64();
    let mut f = Vec::with_capacity(2 * x.len() + 1);
    f.extend_from_slice(x);
    f.push(tv);
    f.extend(x.iter().map(|v| v * tv));
    f
}

/// A fitted CATE estimator `τ̂(x) = h(x, 1) − h(x, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CateModel {
    pub learner: MetaLearner,
    pub base: String,
    pub d: usize,
    /// S-learner: one model. T-learner: `[control, treated]`.
    pub models: Vec<BaseModel>,
}

pub fn fit(ds: &Dataset, learner: MetaLearner, base: &BaseLearnerSpec, seed: u64) -> Result<CateModel> {
    let seed = Seed(seed);
    let models = match learner {
        MetaLearner::S => {
            if ds.is_empty() {
                return Err(Error::Empty("training dataset".into()));
            }
            let rows: Vec<Vec<f64>> = ds.samples().iter().map(|s| s_features(&s.x, s.t)).collect();
            let y: Vec<f64> = ds.samples().iter().map(|s| s.y).collect();
            vec![BaseModel::fit(&rows, &y, base, seed.derive("s"))?]
        }
        MetaLearner::T => {
            ds.require_both_groups()?;
            Treatment::BOTH
                .iter()
                .map(|&t| {
                    let arm: Vec<_> = ds.samples().iter().filter(|s| s.t == t).collect();
                    let rows: Vec<Vec<f64>> = arm.iter().map(|s| s.x.clone()).collect();
                    let y: Vec<f64> = arm.iter().map(|s| s.y).collect();
                    BaseModel::fit(&rows, &y, base, seed.derive_index(t.as_u8() as u64))
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(CateModel {
        learner,
        base: base.name().to_string(),
        d: ds.d(),
        models,
    })
}

impl CateModel {
    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `h(x, t)`.
    pub fn predict_outcome(&self, x: &[f64], t: Treatment) -> Result<f64> {
        self.check(x)?;
        Ok(self.outcome_unchecked(x, t))
    }

    fn outcome_unchecked(&self, x: &[f64], t: Treatment) -> f64 {
        match self.learner {
            MetaLearner::S => self.models[0].predict(&s_features(x, t)),
            MetaLearner::T => self.models[t.index()].predict(x),
        }
    }

    pub fn predict_cate(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.outcome_unchecked(x, Treatment::Treated) - self.outcome_unchecked(x, Treatment::Control))
    }

    /// Mean predicted CATE over the dataset's covariates.
    pub fn predict_ate(&self, ds: &Dataset) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::Empty("dataset".into()));
        }
        let mut total = 0.0;
        for s in ds.samples() {
            total += self.predict_cate(&s.x)?;
        }
        Ok(total / ds.len() as f64)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ");
        writeln!(s, "{MODEL_MAGIC}").unwrap();
        writeln!(s, "learner {}", self.learner.name()).unwrap();
        writeln!(s, "base {}", self.base).unwrap();
        writeln!(s, "d {}", self.d).unwrap();
        writeln!(s, "models {}", self.models.len()).unwrap();
        for m in &self.models {
            match m {
                BaseModel::Ridge { intercept, coef } => {
                    writeln!(s, "ridge {}", coef.len()).unwrap();
                    writeln!(s, "{}", fmt_f64(*intercept)).unwrap();
                    writeln!(s, "{}", join(coef)).unwrap();
                }
                BaseModel::Knn { k, xs, ys } => {
                    writeln!(s, "knn {k} {}", xs.len()).unwrap();
                    for (x, y) in xs.iter().zip(ys) {
                        writeln!(s, "{} {}", fmt_f64(*y), join(x)).unwrap();
                    }
                }
                BaseModel::Mlp { net, x_std, y_mean, y_sd } => {
                    writeln!(s, "mlp").unwrap();
                    writeln!(s, "{} {}", fmt_f64(*y_mean), fmt_f64(*y_sd)).unwrap();
                    writeln!(s, "{}", join(&x_std.mean)).unwrap();
                    writeln!(s, "{}", join(&x_std.sd)).unwrap();
                    s.push_str(&net.to_checkpoint());
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = Error::Checkpoint;
        let mut lines = text.lines();
        fn take<'a>(lines: &mut impl Iterator<Item = &'a str>, what: &str) -> Result<&'a str> {
            lines.next().map(str::trim).ok_or_else(|| Error::Checkpoint(format!("missing {what}")))
        }
        macro_rules! next {
            ($what:expr) => {
                take(&mut lines, $what)
            };
        }
        if next!("magic")? != MODEL_MAGIC {
            return Err(bad("bad magic header".into()));
        }
        fn value<'a>(line: &'a str, key: &str) -> Result<&'a str> {
            line.strip_prefix(key)
                .map(str::trim)
                .ok_or_else(|| Error::Checkpoint(format!("expected `{key}`")))
        }
        fn floats(line: &str) -> Result<Vec<f64>> {
            line.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| Error::Checkpoint(e.to_string())))
                .collect()
        }
        fn count(v: &str) -> Result<usize> {
            v.parse().map_err(|_| Error::Checkpoint(format!("bad count {v:?}")))
        }
        let learner: MetaLearner = value(next!("learner")?, "learner")?.parse()?;
        let base = value(next!("base")?, "base")?.to_string();
        let d = count(value(next!("d")?, "d")?)?;
        let n_models = count(value(next!("models")?, "models")?)?;
        let mut models = Vec::with_capacity(n_models);
        for _ in 0..n_models {
            let head = next!("model header")?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            let model = match parts.as_slice() {
                ["ridge", _] => {
                    let intercept = *floats(next!("intercept")?)?
                        .first()
                        .ok_or_else(|| bad("empty intercept".into()))?;
                    BaseModel::Ridge {
                        intercept,
                        coef: floats(next!("coefficients")?)?,
                    }
                }
                ["knn", k, n] => {
                    let (k, n) = (count(k)?, count(n)?);
                    let mut xs = Vec::with_capacity(n);
                    let mut ys = Vec::with_capacity(n);
                    for _ in 0..n {
                        let row = floats(next!("knn row")?)?;
                        let (y, x) = row.split_first().ok_or_else(|| bad("empty knn row".into()))?;
                        ys.push(*y);
                        xs.push(x.to_vec());
                    }
                    BaseModel::Knn { k, xs, ys }
                }
                ["mlp"] => {
                    let scale = floats(next!("target scale")?)?;
                    if scale.len() != 2 {
                        return Err(bad("target scale needs mean and sd".into()));
                    }
                    let mean = floats(next!("feature means")?)?;
                    let sd = floats(next!("feature sds")?)?;
                    let net = Mlp::read_checkpoint(&mut lines)?;
                    BaseModel::Mlp {
                        net,
                        x_std: Standardizer { mean, sd },
                        y_mean: scale[0],
                        y_sd: scale[1],
                    }
                }
                _ => return Err(bad(format!("unknown model block {head:?}"))),
            };
            models.push(model);
        }
        let model = CateModel {
            learner,
            base,
            d,
            models,
        };
        let expected_models = match learner {
            MetaLearner::S => 1,
            MetaLearner::T => 2,
        };
        let expected_width = match learner {
            MetaLearner::S => 2 * d + 1,
            MetaLearner::T => d,
        };
        if model.models.len() != expected_models || model.models.iter().any(|m| m.width() != expected_width) {
            return Err(bad("model shapes do not match the learner".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

impl Hypothesis for CateModel {
    fn outcome(&self, x: &[f64], t: Treatment) -> f64 {
        self.outcome_unchecked(x, t)
    }
}
