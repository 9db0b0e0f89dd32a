//! Local regression of a counterfactual outcome from a neighbor set.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot, sq_dist, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    DotProduct,
    Rbf,
    Matern32,
}

impl FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" | "dot_product" | "dotproduct" => Ok(KernelKind::DotProduct),
            "rbf" => Ok(KernelKind::Rbf),
            "matern" | "matern32" => Ok(KernelKind::Matern32),
            other => Err(Error::spec(format!("unknown kernel {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Additive bias of the dot-product kernel.
    pub sigma0_sq: f64,
    pub length_scale: f64,
    /// Initial diagonal regularizer; escalated on factorization failure.
    pub jitter: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            kind: KernelKind::DotProduct,
            sigma0_sq: 1.0,
            length_scale: 1.0,
            jitter: 1e-6,
        }
    }
}

impl KernelSpec {
    pub fn new(kind: KernelKind) -> Self {
        KernelSpec {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0_sq >= 0.0) {
            return Err(Error::spec("sigma0_sq must be non-negative"));
        }
        if !(self.length_scale > 0.0) {
            return Err(Error::spec("length_scale must be positive"));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::spec("jitter must be non-negative"));
        }
        Ok(())
    }

    #[inline]
    fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::DotProduct => dot(a, b) + self.sigma0_sq,
            KernelKind::Rbf => (-sq_dist(a, b) / (2.0 * self.length_scale * self.length_scale)).exp(),
            KernelKind::Matern32 => {
                let r = sq_dist(a, b).sqrt();
                let u = 3f64.sqrt() * r / self.length_scale;
                (1.0 + u) * (-u).exp()
            }
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(spec.eval_unchecked(a, b))
}

/// Close neighbors `{(xᵢ, yᵢ)}` of a query point from the alternative arm.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub points: Vec<(Vec<f64>, f64)>,
    pub query: Vec<f64>,
}

impl NeighborSet {
    pub fn new(query: Vec<f64>, points: Vec<(Vec<f64>, f64)>) -> Self {
        NeighborSet { points, query }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Empty("neighbor set".into()));
        }
        let d = self.query.len();
        for (x, y) in &self.points {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
            if !y.is_finite() {
                return Err(Error::Numerical("non-finite neighbor outcome".into()));
            }
        }
        Ok(())
    }
}

/// Gaussian-process posterior mean `ȳ + K_xᵀ (K_xx + jI)⁻¹ (y − ȳ)`.
///
/// The prior mean is the neighbors' average outcome. The system is solved by
/// Cholesky factorization with jitter escalation.
pub fn gp_impute(neighbors: &NeighborSet, kernel: &KernelSpec) -> Result<f64> {
    kernel.validate()?;
    neighbors.validate()?;
    let pts = &neighbors.points;
    let n = pts.len();
    let mean = pts.iter().map(|(_, y)| y).sum::<f64>() / n as f64;
    let centered: Vec<f64> = pts.iter().map(|(_, y)| y - mean).collect();
    let gram = SymMatrix::from_fn(n, |i, j| kernel.eval_unchecked(&pts[i].0, &pts[j].0));
    let (alpha, _) = linalg::solve_spd_with_jitter(&gram, &centered, kernel.jitter)?;
    let k_x: Vec<f64> = pts.iter().map(|(x, _)| kernel.eval_unchecked(&neighbors.query, x)).collect();
    let out = mean + dot(&k_x, &alpha);
    if !out.is_finite() {
        return Err(Error::Numerical("non-finite GP imputation".into()));
    }
    Ok(out)
}

/// Ridge strength used by [`linear_impute`]: `1e-8 · trace(XᵀX) / cols`.
pub fn local_ridge_lambda(design: &[Vec<f64>]) -> f64 {
    let cols = design.first().map_or(1, Vec::len);
    let trace: f64 = design.iter().flatten().map(|v| v * v).sum();
    1e-8 * trace / cols as f64
}

/// Intercept-augmented design rows `[1, x]`.
pub fn intercept_design(neighbors: &NeighborSet) -> Vec<Vec<f64>> {
    neighbors
        .points
        .iter()
        .map(|(x, _)| std::iter::once(1.0).chain(x.iter().copied()).collect())
        .collect()
}

/// Local linear regression evaluated at the query, `[1, x]ᵀ β̂` with
/// `β̂ = (XᵀX + λI)⁻¹ Xᵀy`.
pub fn linear_impute(neighbors: &NeighborSet) -> Result<f64> {
    neighbors.validate()?;
    let design = intercept_design(neighbors);
    let y: Vec<f64> = neighbors.points.iter().map(|(_, y)| *y).collect();
    let lambda = local_ridge_lambda(&design).max(f64::MIN_POSITIVE);
    let beta = linalg::ridge_normal_equations(&design, &y, lambda)?;
    Ok(beta[0] + dot(&beta[1..], &neighbors.query))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputerKind {
    Gp,
    Linear,
}

impl FromStr for ImputerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gp" => Ok(ImputerKind::Gp),
            "linear" => Ok(ImputerKind::Linear),
            other => Err(Error::spec(format!("unknown imputer {other:?}"))),
        }
    }
}

pub fn impute(kind: ImputerKind, neighbors: &NeighborSet, kernel: Option<&KernelSpec>) -> Result<f64> {
    match kind {
        ImputerKind::Gp => {
            let kernel = kernel.ok_or_else(|| Error::spec("the gp imputer needs a kernel"))?;
            gp_impute(neighbors, kernel)
        }
        ImputerKind::Linear => linear_impute(neighbors),
    }
}
