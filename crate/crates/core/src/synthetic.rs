//! Synthetic and semi-synthetic generators with known potential-outcome
//! means, so that PEHE can be computed exactly.

use rand::Rng as _;
use rand_distr::{Bernoulli, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FactualSample, PotentialMeans, Treatment};
use crate::error::{Error, Result};
use crate::linalg::{dot, sigmoid};
use crate::rng::{Rng, Seed};

/// How treatment is assigned given covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// `p(t=1|x) = σ(x₁ + x₂)` (only `x₁` when `d = 1`).
    Logistic,
    /// `t ~ Bernoulli(p)` independently of `x`; `p = 0.5` is an RCT.
    Randomized(f64),
}

impl Assignment {
    pub fn propensity(&self, x: &[f64]) -> f64 {
        match *self {
            Assignment::Logistic => sigmoid(x.iter().take(2).sum()),
            Assignment::Randomized(p) => p,
        }
    }
}

/// Parameters of the linear and non-linear generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGenSpec {
    pub n: usize,
    pub d: usize,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub noise_sd: f64,
    pub assignment: Assignment,
    pub seed: u64,
}

/// The non-linear generator shares its parameters with the linear one.
pub type NonLinearGenSpec = LinearGenSpec;

impl LinearGenSpec {
    /// `n` samples in `d` dimensions with `β₀ = 0.5`, `β₁ = 0.3`,
    /// noise sd 0.1 and logistic assignment.
    pub fn new(n: usize, d: usize, seed: u64) -> Self {
        LinearGenSpec {
            n,
            d,
            beta0: vec![0.5; d],
            beta1: vec![0.3; d],
            noise_sd: 0.1,
            assignment: Assignment::Logistic,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::spec("d must be at least 1"));
        }
        if self.beta0.len() != self.d || self.beta1.len() != self.d {
            return Err(Error::spec("beta0 and beta1 must have length d"));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::spec("noise_sd must be finite and non-negative"));
        }
        if let Assignment::Randomized(p) = self.assignment {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::spec("randomized assignment probability must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn linear_means(&self, x: &[f64]) -> PotentialMeans {
        PotentialMeans {
            mu0: dot(&self.beta0, x),
            mu1: dot(&self.beta1, x),
        }
    }

    pub fn nonlinear_means(&self, x: &[f64]) -> PotentialMeans {
        PotentialMeans {
            mu0: dot(&self.beta0, x).exp(),
            mu1: dot(&self.beta1, x).exp(),
        }
    }
}

impl Default for LinearGenSpec {
    fn default() -> Self {
        LinearGenSpec::new(1500, 10, 0)
    }
}

fn standard_normal_rows(n: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

fn noise(sd: f64, rng: &mut Rng) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    }
}

fn draw_treatment(p: f64, rng: &mut Rng) -> Treatment {
    if rng.random::<f64>() < p {
        Treatment::Treated
    } else {
        Treatment::Control
    }
}

fn generate(
    spec: &LinearGenSpec,
    name: &str,
    means: impl Fn(&[f64]) -> PotentialMeans,
) -> Result<Dataset> {
    spec.validate()?;
    let seed = Seed(spec.seed);
    let xs = standard_normal_rows(spec.n, spec.d, &mut seed.derive("covariates").rng());
    let mut t_rng = seed.derive("treatment").rng();
    let mut y_rng = seed.derive("noise").rng();
    let samples = xs
        .into_iter()
        .map(|x| {
            let m = means(&x);
            let t = draw_treatment(spec.assignment.propensity(&x), &mut t_rng);
            let y = m.get(t) + noise(spec.noise_sd, &mut y_rng);
            FactualSample::new(x, t, y).with_truth(m.mu0, m.mu1)
        })
        .collect();
    Dataset::new(name, spec.d, samples)
}

/// `mu_t(x) = β_t·x`, `y = mu_t(x) + N(0, noise_sd²)`, `x ~ N(0, I)`.
pub fn gen_linear(spec: &LinearGenSpec) -> Result<Dataset> {
    generate(spec, "linear", |x| spec.linear_means(x))
}

/// `mu_t(x) = exp(β_t·x)`, otherwise as [`gen_linear`].
pub fn gen_nonlinear(spec: &NonLinearGenSpec) -> Result<Dataset> {
    for (name, mu) in [("mu0", &spec.beta0), ("mu1", &spec.beta1)] {
        if mu.iter().any(|b| !b.is_finite()) {
            return Err(Error::spec(format!("non-finite coefficient in {name}")));
        }
    }
    let ds = generate(spec, "nonlinear", |x| spec.nonlinear_means(x))?;
    Ok(ds)
}

/// Where covariates for the semi-synthetic generators come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateSource {
    /// Rows of a supplied dataset; its treatment column is reused.
    Supplied(Dataset),
    /// i.i.d. standard normal rows; treatment drawn from
    /// `σ(ln(139/608) + x₁)`, which reproduces the 139/608 arm ratio of the
    /// reference study on average.
    Gaussian { n: usize, d: usize },
}

impl CovariateSource {
    fn materialize(&self, seed: Seed) -> Result<(Vec<Vec<f64>>, Vec<Treatment>)> {
        match self {
            CovariateSource::Supplied(ds) => {
                if ds.is_empty() || ds.d() == 0 {
                    return Err(Error::Empty("covariate matrix".into()));
                }
                Ok((
                    ds.samples().iter().map(|s| s.x.clone()).collect(),
                    ds.samples().iter().map(|s| s.t).collect(),
                ))
            }
            &CovariateSource::Gaussian { n, d } => {
                if n == 0 || d == 0 {
                    return Err(Error::Empty("covariate matrix".into()));
                }
                let xs = standard_normal_rows(n, d, &mut seed.derive("covariates").rng());
                let offset = (139.0f64 / 608.0).ln();
                let mut rng = seed.derive("treatment").rng();
                let ts = xs
                    .iter()
                    .map(|x| draw_treatment(sigmoid(offset + x[0]), &mut rng))
                    .collect();
                Ok((xs, ts))
            }
        }
    }
}

/// Setting-B style response surfaces over (possibly real) covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct IhdpStyleGenSpec {
    pub covariates: CovariateSource,
    pub omega: f64,
    pub beta_support: Vec<f64>,
    pub beta_probs: Vec<f64>,
    pub w_offset: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for IhdpStyleGenSpec {
    fn default() -> Self {
        IhdpStyleGenSpec {
            covariates: CovariateSource::Gaussian { n: 747, d: 25 },
            omega: 4.0,
            beta_support: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            beta_probs: vec![0.6, 0.1, 0.1, 0.1, 0.1],
            w_offset: 0.5,
            noise_sd: 1.0,
            seed: 0,
        }
    }
}

/// Draws `d` coefficients i.i.d. from a categorical distribution.
pub fn draw_categorical(support: &[f64], probs: &[f64], d: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if support.is_empty() || support.len() != probs.len() {
        return Err(Error::spec("support and probabilities must be nonempty and of equal length"));
    }
    if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::spec("probabilities must be non-negative and sum to 1"));
    }
    Ok((0..d)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (v, p) in support.iter().zip(probs) {
                acc += p;
                if u < acc {
                    return *v;
                }
            }
            *support.last().unwrap()
        })
        .collect())
}

/// `mu0 = exp(βᵀ(x+W))`, `mu1 = βᵀ(x+W) − ω`, `y ~ N(mu_t, noise_sd²)`.
pub fn ihdp_means(beta: &[f64], w_offset: f64, omega: f64, x: &[f64]) -> PotentialMeans {
    let lin: f64 = beta.iter().zip(x).map(|(b, v)| b * (v + w_offset)).sum();
    PotentialMeans {
        mu0: lin.exp(),
        mu1: lin - omega,
    }
}

pub fn gen_ihdp_style(spec: &IhdpStyleGenSpec) -> Result<Dataset> {
    Ok(gen_ihdp_style_with_coefficients(spec)?.0)
}

/// As [`gen_ihdp_style`], also returning the drawn coefficient vector.
pub fn gen_ihdp_style_with_coefficients(spec: &IhdpStyleGenSpec) -> Result<(Dataset, Vec<f64>)> {
    if !(spec.noise_sd >= 0.0) {
        return Err(Error::spec("noise_sd must be non-negative"));
    }
    let seed = Seed(spec.seed);
    let (xs, ts) = spec.covariates.materialize(seed)?;
    let d = xs[0].len();
    let beta = draw_categorical(&spec.beta_support, &spec.beta_probs, d, &mut seed.derive("beta").rng())?;
    let mut y_rng = seed.derive("noise").rng();
    let samples = xs
        .into_iter()
        .zip(ts)
        .map(|(x, t)| {
            let m = ihdp_means(&beta, spec.w_offset, spec.omega, &x);
            let y = m.get(t) + noise(spec.noise_sd, &mut y_rng);
            FactualSample::new(x, t, y).with_truth(m.mu0, m.mu1)
        })
        .collect();
    let ds = Dataset::new("ihdp", d, samples)?;
    Ok((ds, beta))
}

/// Twins-style surfaces: `mu0 = exp(βᵀx)`, `mu1 = αᵀx` with
/// `β, α ~ N(0, coef_sd²·I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinsStyleGenSpec {
    pub covariates: CovariateSource,
    pub coef_sd: f64,
    /// Observation noise standard deviation (variance 0.2 by default).
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for TwinsStyleGenSpec {
    fn default() -> Self {
        TwinsStyleGenSpec {
            covariates: CovariateSource::Gaussian { n: 1000, d: 8 },
            coef_sd: 1.0,
            noise_sd: 0.2f64.sqrt(),
            seed: 0,
        }
    }
}

pub fn gen_twins_style(spec: &TwinsStyleGenSpec) -> Result<Dataset> {
    if !(spec.noise_sd >= 0.0) || !(spec.coef_sd >= 0.0) {
        return Err(Error::spec("noise_sd and coef_sd must be non-negative"));
    }
    let seed = Seed(spec.seed);
    let (xs, ts) = spec.covariates.materialize(seed)?;
    let d = xs[0].len();
    let coef = Normal::new(0.0, spec.coef_sd).map_err(|e| Error::spec(e.to_string()))?;
    let mut c_rng = seed.derive("beta").rng();
    let beta: Vec<f64> = (0..d).map(|_| coef.sample(&mut c_rng)).collect();
    let alpha: Vec<f64> = (0..d).map(|_| coef.sample(&mut c_rng)).collect();
    let mut y_rng = seed.derive("noise").rng();
    let mut samples = Vec::with_capacity(xs.len());
    for (x, t) in xs.into_iter().zip(ts) {
        let m = PotentialMeans {
            mu0: dot(&beta, &x).exp(),
            mu1: dot(&alpha, &x),
        };
        if !m.mu0.is_finite() {
            return Err(Error::Numerical(
                "exp(βᵀx) overflowed; reduce coef_sd or rescale covariates".into(),
            ));
        }
        let y = m.get(t) + noise(spec.noise_sd, &mut y_rng);
        samples.push(FactualSample::new(x, t, y).with_truth(m.mu0, m.mu1));
    }
    Dataset::new("twins", d, samples)
}

/// Bernoulli draw helper used by Monte-Carlo checks of the propensity.
pub fn bernoulli(p: f64, rng: &mut Rng) -> bool {
    Bernoulli::new(p.clamp(0.0, 1.0)).map(|b| b.sample(rng)).unwrap_or(false)
}
