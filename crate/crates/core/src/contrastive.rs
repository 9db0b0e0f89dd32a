//! Siamese similarity classifier over individuals.
//!
//! Two individuals under the same treatment are *similar* when their observed
//! outcomes differ by at most `ε`. An embedding network is trained so that
//! similar pairs land within `radius` of each other in embedding space; the
//! classifier answers `g(x, x') = 1` exactly when
//! `‖e(z(x)) − e(z(x'))‖₂ ≤ radius`, where `z` standardizes covariates.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, Dataset, Standardizer, Treatment};
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, sq_dist};
use crate::neuralnet::{Activation, Mlp, MlpSpec, Optimizer, OptimizerKind, OutputActivation, TrainSpec};
use crate::rng::Seed;

const CHECKPOINT_MAGIC: &str = "COCOA-SIAMESE 1";

/// Same-treatment pairs are sampled for percentile estimation beyond this
/// many.
const MAX_GAP_PAIRS: usize = 2_000_000;

/// A labelled training pair for the similarity classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairExample {
    pub i: usize,
    pub j: usize,
    /// 1 = outcomes within `ε`.
    pub label: u8,
}

/// Outcome-similarity threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epsilon {
    Absolute(f64),
    /// q-th percentile (0–100) of the observed same-treatment outcome gaps.
    Percentile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveSpec {
    pub epsilon: Epsilon,
    pub max_pairs_per_anchor: usize,
    /// The first layer size is replaced by the covariate dimension at fit
    /// time.
    pub embedding: MlpSpec,
    pub train: TrainSpec,
    pub radius: f64,
    pub seed: u64,
}

impl Default for ContrastiveSpec {
    fn default() -> Self {
        ContrastiveSpec {
            epsilon: Epsilon::Percentile(10.0),
            max_pairs_per_anchor: 50,
            embedding: MlpSpec::new(vec![0, 64, 64, 16], Activation::Relu, OutputActivation::Identity),
            train: TrainSpec {
                optimizer: OptimizerKind::Adam,
                learning_rate: 1e-3,
                batch_size: 128,
                epochs: 4,
                l2: 0.0,
                seed: 0,
            },
            radius: 1.0,
            seed: 0,
        }
    }
}

impl ContrastiveSpec {
    pub fn validate(&self) -> Result<()> {
        match self.epsilon {
            Epsilon::Absolute(e) if !(e > 0.0) => return Err(Error::spec("epsilon must be positive")),
            Epsilon::Percentile(q) if !(q > 0.0 && q <= 100.0) => {
                return Err(Error::spec("epsilon percentile must lie in (0, 100]"))
            }
            _ => {}
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::spec("training radius must be positive and finite"));
        }
        if self.max_pairs_per_anchor == 0 {
            return Err(Error::spec("max_pairs_per_anchor must be at least 1"));
        }
        if self.embedding.layer_sizes.len() < 2 {
            return Err(Error::spec("embedding network needs at least one layer"));
        }
        self.train.validate()
    }
}

/// Resolves `ε` to an absolute threshold on `ds`.
pub fn resolve_epsilon(ds: &Dataset, epsilon: Epsilon, seed: Seed) -> Result<f64> {
    match epsilon {
        Epsilon::Absolute(e) => Ok(e),
        Epsilon::Percentile(q) => {
            let mut gaps = same_treatment_gaps(ds, seed);
            if gaps.is_empty() {
                return Err(Error::InsufficientPairs);
            }
            gaps.sort_unstable_by(f64::total_cmp);
            let pos = q / 100.0 * (gaps.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let v = gaps[lo] + (gaps[hi] - gaps[lo]) * (pos - lo as f64);
            // ε must stay positive even when most gaps are ties.
            Ok(if v > 0.0 {
                v
            } else {
                gaps.iter().copied().find(|g| *g > 0.0).unwrap_or(f64::MIN_POSITIVE)
            })
        }
    }
}

fn same_treatment_gaps(ds: &Dataset, seed: Seed) -> Vec<f64> {
    let groups: Vec<Vec<f64>> = Treatment::BOTH
        .iter()
        .map(|&t| ds.samples().iter().filter(|s| s.t == t).map(|s| s.y).collect())
        .collect();
    let total: usize = groups.iter().map(|g| g.len() * g.len().saturating_sub(1) / 2).sum();
    let mut gaps = Vec::with_capacity(total.min(MAX_GAP_PAIRS));
    if total <= MAX_GAP_PAIRS {
        for g in &groups {
            for a in 0..g.len() {
                for b in a + 1..g.len() {
                    gaps.push((g[a] - g[b]).abs());
                }
            }
        }
    } else {
        use rand::Rng as _;
        let mut rng = seed.derive("gap-sample").rng();
        let weights: Vec<usize> = groups.iter().map(|g| g.len() * g.len().saturating_sub(1) / 2).collect();
        for _ in 0..MAX_GAP_PAIRS {
            let g = if rng.random_range(0..total) < weights[0] { &groups[0] } else { &groups[1] };
            let a = rng.random_range(0..g.len());
            let mut b = rng.random_range(0..g.len() - 1);
            if b >= a {
                b += 1;
            }
            gaps.push((g[a] - g[b]).abs());
        }
    }
    gaps
}

/// Builds the positive (`|yᵢ − yⱼ| ≤ ε`) and negative pair sets.
///
/// For every anchor, up to `max_pairs_per_anchor` partners of each label are
/// drawn uniformly without replacement among same-treatment individuals.
/// Pairs are reported once, as `(min, max)`, sorted.
pub fn build_pairs(
    ds: &Dataset,
    epsilon: f64,
    max_pairs_per_anchor: usize,
    seed: Seed,
) -> Result<(Vec<PairExample>, Vec<PairExample>)> {
    if !(epsilon > 0.0) {
        return Err(Error::spec("epsilon must be positive"));
    }
    let (c, t) = ds.group_sizes();
    if c < 2 && t < 2 {
        return Err(Error::InsufficientPairs);
    }
    let by_arm = [ds.indices_of(Treatment::Control), ds.indices_of(Treatment::Treated)];
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, s) in ds.samples().iter().enumerate() {
        let mut similar = Vec::new();
        let mut dissimilar = Vec::new();
        for &j in &by_arm[s.t.index()] {
            if j == i {
                continue;
            }
            if (s.y - ds.get(j).y).abs() <= epsilon {
                similar.push(j);
            } else {
                dissimilar.push(j);
            }
        }
        let mut rng = seed.derive_index(i as u64).rng();
        for (pool, out, label) in [(&similar, &mut pos, 1u8), (&dissimilar, &mut neg, 0u8)] {
            let pick = |j: usize| PairExample {
                i: i.min(j),
                j: i.max(j),
                label,
            };
            if pool.len() <= max_pairs_per_anchor {
                out.extend(pool.iter().map(|&j| pick(j)));
            } else {
                out.extend(
                    index::sample(&mut rng, pool.len(), max_pairs_per_anchor)
                        .into_iter()
                        .map(|k| pick(pool[k])),
                );
            }
        }
    }
    for v in [&mut pos, &mut neg] {
        v.sort_unstable();
        v.dedup();
    }
    Ok((pos, neg))
}

/// Trained pair classifier `g_θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseClassifier {
    pub embedding: Mlp,
    pub radius: f64,
    /// Sharpness `s` of the training-time soft decision `σ(s·(R − d))`.
    pub scale: f64,
    pub standardizer: Standardizer,
}

impl SiameseClassifier {
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.standardizer.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.standardizer.mean.len(),
                got: x.len(),
            });
        }
        self.embedding.forward(&self.standardizer.transform(x))
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(sq_dist(&self.embed(a)?, &self.embed(b)?).sqrt())
    }

    /// Hard decision `g(a, b)`.
    pub fn similar(&self, a: &[f64], b: &[f64]) -> Result<bool> {
        Ok(self.distance(a, b)? <= self.radius)
    }

    /// Soft decision used during training.
    pub fn probability(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.scale * (self.radius - self.distance(a, b)?)))
    }

    /// Same embedding, different decision radius.
    pub fn with_radius(&self, radius: f64) -> Self {
        SiameseClassifier {
            radius,
            ..self.clone()
        }
    }

    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(s, "radius {}", fmt_f64(self.radius)).unwrap();
        writeln!(s, "scale {}", fmt_f64(self.scale)).unwrap();
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ");
        writeln!(s, "mean {}", join(&self.standardizer.mean)).unwrap();
        writeln!(s, "sd {}", join(&self.standardizer.sd)).unwrap();
        s.push_str(&self.embedding.to_checkpoint());
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if lines.next().map(str::trim) != Some(CHECKPOINT_MAGIC) {
            return Err(bad("bad magic header"));
        }
        let mut field = |key: &str| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {key}")))?;
            let rest = line
                .trim()
                .strip_prefix(key)
                .ok_or_else(|| bad(&format!("expected `{key}`")))?;
            rest.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| bad(&e.to_string())))
                .collect()
        };
        let radius = *field("radius")?.first().ok_or_else(|| bad("empty radius"))?;
        let scale = *field("scale")?.first().ok_or_else(|| bad("empty scale"))?;
        let mean = field("mean")?;
        let sd = field("sd")?;
        let embedding = Mlp::read_checkpoint(&mut lines)?;
        if mean.len() != sd.len() || mean.len() != embedding.input_dim() {
            return Err(bad("standardization width does not match the network input"));
        }
        Ok(SiameseClassifier {
            embedding,
            radius,
            scale,
            standardizer: Standardizer { mean, sd },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

/// Diagnostics from [`fit_with_report`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub epsilon: f64,
    pub positives: usize,
    pub negatives: usize,
    pub loss_trace: Vec<f64>,
}

pub fn fit(ds: &Dataset, spec: &ContrastiveSpec) -> Result<SiameseClassifier> {
    fit_with_report(ds, spec).map(|(c, _)| c)
}

/// Trains the embedding with binary cross-entropy on
/// `σ(s·(R − ‖e(zᵢ) − e(zⱼ)‖₂))`, jointly learning `s = exp(log s) > 0`
/// (initialized to 1).
pub fn fit_with_report(ds: &Dataset, spec: &ContrastiveSpec) -> Result<(SiameseClassifier, FitReport)> {
    spec.validate()?;
    let seed = Seed(spec.seed);
    let epsilon = resolve_epsilon(ds, spec.epsilon, seed)?;
    let (pos, neg) = build_pairs(ds, epsilon, spec.max_pairs_per_anchor, seed.derive("pairs"))?;

    let standardizer = Standardizer::fit(ds.samples().iter().map(|s| s.x.as_slice()), ds.d());
    let z: Vec<Vec<f64>> = ds.samples().iter().map(|s| standardizer.transform(&s.x)).collect();

    let mut mlp_spec = spec.embedding.clone();
    mlp_spec.layer_sizes[0] = ds.d();
    let mut net = Mlp::new(&mlp_spec)?;
    let radius = spec.radius;
    let mut log_scale = 0.0f64;

    let mut pairs: Vec<PairExample> = pos.iter().chain(&neg).copied().collect();
    let mut opt = Optimizer::new(spec.train.optimizer, spec.train.learning_rate, net.num_params());
    let mut opt_scale = Optimizer::new(spec.train.optimizer, spec.train.learning_rate, 1);
    let mut rng = Seed(spec.train.seed).derive("pair-shuffle").rng();
    let mut grads = vec![0.0; net.num_params()];
    let mut loss_trace = Vec::with_capacity(spec.train.epochs);

    for epoch in 0..spec.train.epochs {
        pairs.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in pairs.chunks(spec.train.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut g_log_scale = 0.0;
            let s = log_scale.exp();
            let inv = 1.0 / batch.len() as f64;
            for p in batch {
                let ti = net.forward_trace(&z[p.i])?;
                let tj = net.forward_trace(&z[p.j])?;
                let diff: Vec<f64> = ti.output().iter().zip(tj.output()).map(|(a, b)| a - b).collect();
                let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                let logit = s * (radius - dist);
                let label = f64::from(p.label);
                total += logit.max(0.0) - label * logit + (-logit.abs()).exp().ln_1p();
                let g = (sigmoid(logit) - label) * inv;
                g_log_scale += g * (radius - dist) * s;
                if dist > 0.0 {
                    let coef = -g * s / dist;
                    let di: Vec<f64> = diff.iter().map(|v| coef * v).collect();
                    let dj: Vec<f64> = di.iter().map(|v| -v).collect();
                    net.backprop(&ti, &di, &mut grads);
                    net.backprop(&tj, &dj, &mut grads);
                }
            }
            if spec.train.l2 > 0.0 {
                for (g, p) in grads.iter_mut().zip(net.params()) {
                    *g += spec.train.l2 * p;
                }
            }
            opt.step(net.params_mut(), &grads);
            opt_scale.step(std::slice::from_mut(&mut log_scale), &[g_log_scale]);
        }
        let mean = total / pairs.len().max(1) as f64;
        if !mean.is_finite() || !log_scale.is_finite() || net.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch: epoch + 1 });
        }
        loss_trace.push(mean);
    }

    let clf = SiameseClassifier {
        embedding: net,
        radius,
        scale: log_scale.exp(),
        standardizer,
    };
    let report = FitReport {
        epsilon,
        positives: pos.len(),
        negatives: neg.len(),
        loss_trace,
    };
    Ok((clf, report))
}

/// Fraction of pairs whose hard decision matches the label.
pub fn pair_accuracy(clf: &SiameseClassifier, ds: &Dataset, pairs: &[PairExample]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("pairs".into()));
    }
    let emb = embed_all(clf, ds)?;
    let hits = pairs
        .iter()
        .filter(|p| (sq_dist(&emb[p.i], &emb[p.j]).sqrt() <= clf.radius) == (p.label == 1))
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

pub fn embed_all(clf: &SiameseClassifier, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    ds.samples().iter().map(|s| clf.embed(&s.x)).collect()
}

/// Cached embeddings of one dataset for repeated neighbor queries.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    embeddings: Vec<Vec<f64>>,
    treatments: Vec<Treatment>,
}

impl NeighborIndex {
    pub fn new(clf: &SiameseClassifier, ds: &Dataset) -> Result<Self> {
        Ok(NeighborIndex {
            embeddings: embed_all(clf, ds)?,
            treatments: ds.samples().iter().map(|s| s.t).collect(),
        })
    }

    /// Builds an index over precomputed embeddings.
    pub fn from_embeddings(embeddings: Vec<Vec<f64>>, treatments: Vec<Treatment>) -> Self {
        NeighborIndex {
            embeddings,
            treatments,
        }
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Opposite-treatment individuals within `radius` of `i`, as
    /// `(index, distance)` sorted by ascending distance, then index.
    pub fn neighbors(&self, i: usize, radius: f64) -> Vec<(usize, f64)> {
        let target = self.treatments[i].flip();
        let e = &self.embeddings[i];
        let mut out: Vec<(usize, f64)> = (0..self.len())
            .filter(|&j| self.treatments[j] == target)
            .map(|j| (j, sq_dist(e, &self.embeddings[j]).sqrt()))
            .filter(|&(_, d)| d <= radius)
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }
}

/// `D_{x,t}` for individual `i` of `ds`: indices `j` with `t_j = 1 − t_i`
/// and `g(x_i, x_j) = 1`, nearest first.
pub fn neighbors(clf: &SiameseClassifier, ds: &Dataset, i: usize) -> Result<Vec<usize>> {
    if i >= ds.len() {
        return Err(Error::spec(format!("index {i} out of range for {} samples", ds.len())));
    }
    let index = NeighborIndex::new(clf, ds)?;
    Ok(index.neighbors(i, clf.radius).into_iter().map(|(j, _)| j).collect())
}
