//! PEHE, ATE error, empirical factual and counterfactual losses, and an MMD
//! measure of covariate imbalance between treatment groups.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PotentialMeans, Treatment};
use crate::error::{Error, Result};
use crate::linalg::sq_dist;

/// An outcome model `h(x, t)`.
pub trait Hypothesis {
    fn outcome(&self, x: &[f64], t: Treatment) -> f64;

    fn cate(&self, x: &[f64]) -> f64 {
        self.outcome(x, Treatment::Treated) - self.outcome(x, Treatment::Control)
    }
}

impl<F> Hypothesis for F
where
    F: Fn(&[f64], Treatment) -> f64,
{
    fn outcome(&self, x: &[f64], t: Treatment) -> f64 {
        self(x, t)
    }
}

fn truth(ds: &Dataset) -> Result<Vec<PotentialMeans>> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation dataset".into()));
    }
    ds.samples().iter().map(|s| s.truth.ok_or(Error::MissingGroundTruth)).collect()
}

/// `sqrt(mean (τ̂(x) − τ(x))²)` over the dataset's covariates.
pub fn sqrt_pehe<H: Hypothesis + ?Sized>(h: &H, ds: &Dataset) -> Result<f64> {
    let truth = truth(ds)?;
    let sum: f64 = ds
        .samples()
        .iter()
        .zip(&truth)
        .map(|(s, m)| (h.cate(&s.x) - m.effect()).powi(2))
        .sum();
    Ok((sum / ds.len() as f64).sqrt())
}

/// `|mean τ̂(x) − mean τ(x)|`.
pub fn ate_error<H: Hypothesis + ?Sized>(h: &H, ds: &Dataset) -> Result<f64> {
    let truth = truth(ds)?;
    let diff: f64 = ds.samples().iter().zip(&truth).map(|(s, m)| h.cate(&s.x) - m.effect()).sum();
    Ok((diff / ds.len() as f64).abs())
}

/// Mean squared error of `h` on the observed outcomes.
pub fn empirical_factual_loss<H: Hypothesis + ?Sized>(h: &H, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let sum: f64 = ds.samples().iter().map(|s| (s.y - h.outcome(&s.x, s.t)).powi(2)).sum();
    Ok(sum / ds.len() as f64)
}

/// Noiseless factual loss: mean of `(μ_t(x) − h(x, t))²`.
pub fn noiseless_factual_loss<H: Hypothesis + ?Sized>(h: &H, ds: &Dataset) -> Result<f64> {
    let truth = truth(ds)?;
    let sum: f64 = ds
        .samples()
        .iter()
        .zip(&truth)
        .map(|(s, m)| (m.get(s.t) - h.outcome(&s.x, s.t)).powi(2))
        .sum();
    Ok(sum / ds.len() as f64)
}

/// Noiseless counterfactual loss: mean of `(μ_{1−t}(x) − h(x, 1−t))²`.
pub fn empirical_counterfactual_loss<H: Hypothesis + ?Sized>(h: &H, ds: &Dataset) -> Result<f64> {
    let truth = truth(ds)?;
    let sum: f64 = ds
        .samples()
        .iter()
        .zip(&truth)
        .map(|(s, m)| {
            let t = s.t.flip();
            (m.get(t) - h.outcome(&s.x, t)).powi(2)
        })
        .sum();
    Ok(sum / ds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub sqrt_pehe: f64,
    pub ate_error: f64,
    pub n_eval: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

pub fn evaluate<H: Hypothesis + ?Sized>(h: &H, ds: &Dataset) -> Result<EvalResult> {
    let result = EvalResult {
        sqrt_pehe: sqrt_pehe(h, ds)?,
        ate_error: ate_error(h, ds)?,
        n_eval: ds.len(),
        config: None,
    };
    if !result.sqrt_pehe.is_finite() || !result.ate_error.is_finite() {
        return Err(Error::Numerical("non-finite evaluation metric".into()));
    }
    Ok(result)
}

/// Median pairwise Euclidean distance over all pairs of `points`.
pub fn median_pairwise_distance(points: &[&[f64]]) -> f64 {
    let mut d = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(sq_dist(points[i], points[j]));
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, hi, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    let med_sq = if d.len() % 2 == 1 {
        hi
    } else {
        let lo = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    med_sq.sqrt()
}

/// Unbiased squared MMD between two samples under an RBF kernel of the given
/// bandwidth, clipped at 0. A group of one contributes no within-group term.
pub fn mmd_with_bandwidth(a: &[&[f64]], b: &[&[f64]], bandwidth: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("MMD sample".into()));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::spec("MMD bandwidth must be positive and finite"));
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let k = |x: &[f64], y: &[f64]| (-gamma * sq_dist(x, y)).exp();
    let within = |s: &[&[f64]]| {
        let n = s.len();
        if n < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += k(s[i], s[j]);
            }
        }
        2.0 * sum / (n * (n - 1)) as f64
    };
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += k(x, y);
        }
    }
    cross /= (a.len() * b.len()) as f64;
    Ok((within(a) + within(b) - 2.0 * cross).max(0.0))
}

/// Squared MMD between treated and control covariates, with bandwidth set to
/// the median pairwise distance of the pooled sample (1 if that is 0).
pub fn mmd_imbalance(ds: &Dataset) -> Result<f64> {
    ds.require_both_groups()?;
    let pooled: Vec<&[f64]> = ds.samples().iter().map(|s| s.x.as_slice()).collect();
    let bw = match median_pairwise_distance(&pooled) {
        m if m > 0.0 => m,
        _ => 1.0,
    };
    let group = |t: Treatment| -> Vec<&[f64]> { ds.samples().iter().filter(|s| s.t == t).map(|s| s.x.as_slice()).collect() };
    mmd_with_bandwidth(&group(Treatment::Treated), &group(Treatment::Control), bw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FactualSample;
    use proptest::prelude::*;

    fn with_effects(effects: &[f64]) -> Dataset {
        let samples = effects
            .iter()
            .enumerate()
            .map(|(i, &tau)| {
                let t = if i % 2 == 0 { Treatment::Control } else { Treatment::Treated };
                FactualSample::new(vec![i as f64], t, 0.0).with_truth(0.0, tau)
            })
            .collect();
        Dataset::new("e", 1, samples).unwrap()
    }

    fn constant(c: f64) -> impl Fn(&[f64], Treatment) -> f64 {
        move |_: &[f64], t: Treatment| c * t.as_f64()
    }

    #[test]
    fn pehe_and_ate_hand_cases() {
        let ds = with_effects(&[2.0, 2.0, 2.0]);
        assert_eq!(sqrt_pehe(&constant(0.0), &ds).unwrap(), 2.0);
        assert_eq!(ate_error(&constant(0.0), &ds).unwrap(), 2.0);
        assert_eq!(sqrt_pehe(&constant(2.0), &ds).unwrap(), 0.0);

        // τ̂ − τ = (1, −1, 1).
        let ds = with_effects(&[0.0, 2.0, 0.0]);
        let h = constant(1.0);
        assert!((sqrt_pehe(&h, &ds).unwrap() - 1.0).abs() < 1e-15);
        assert!((ate_error(&h, &ds).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn missing_truth_is_an_error() {
        let ds = Dataset::new("n", 1, vec![FactualSample::new(vec![0.0], Treatment::Control, 1.0)]).unwrap();
        assert!(matches!(sqrt_pehe(&constant(0.0), &ds), Err(Error::MissingGroundTruth)));
        assert!(matches!(empirical_counterfactual_loss(&constant(0.0), &ds), Err(Error::MissingGroundTruth)));
        assert!(empirical_factual_loss(&constant(0.0), &Dataset::empty("e", 1)).is_err());
    }

    #[test]
    fn factual_and_counterfactual_losses() {
        let samples = vec![
            FactualSample::new(vec![0.0], Treatment::Control, 1.0).with_truth(1.0, 4.0),
            FactualSample::new(vec![1.0], Treatment::Treated, 3.0).with_truth(0.0, 3.0),
            FactualSample::new(vec![2.0], Treatment::Control, 0.0).with_truth(0.0, -2.0),
        ];
        let ds = Dataset::new("h", 1, samples).unwrap();
        let zero = |_: &[f64], _: Treatment| 0.0;
        // (1 + 9 + 0) / 3 and (16 + 0 + 4) / 3.
        assert!((empirical_factual_loss(&zero, &ds).unwrap() - 10.0 / 3.0).abs() < 1e-15);
        assert!((empirical_counterfactual_loss(&zero, &ds).unwrap() - 20.0 / 3.0).abs() < 1e-15);
        let oracle = |x: &[f64], t: Treatment| ds.samples()[x[0] as usize].truth.unwrap().get(t);
        assert_eq!(empirical_counterfactual_loss(&oracle, &ds).unwrap(), 0.0);
        assert_eq!(noiseless_factual_loss(&oracle, &ds).unwrap(), 0.0);
        let ones = Dataset::new(
            "o",
            1,
            (0..4).map(|k| FactualSample::new(vec![k as f64], Treatment::Control, 1.0)).collect(),
        )
        .unwrap();
        assert_eq!(empirical_factual_loss(&zero, &ones).unwrap(), 1.0);
    }

    fn two_groups(a: &[f64], b: &[f64]) -> Dataset {
        let samples = a
            .iter()
            .map(|&x| FactualSample::new(vec![x], Treatment::Treated, 0.0))
            .chain(b.iter().map(|&x| FactualSample::new(vec![x], Treatment::Control, 0.0)))
            .collect();
        Dataset::new("g", 1, samples).unwrap()
    }

    #[test]
    fn mmd_identical_groups_is_zero() {
        let pts = [0.1, -0.4, 2.0, 0.7, 1.1];
        assert!(mmd_imbalance(&two_groups(&pts, &pts)).unwrap() < 1e-9);
    }

    #[test]
    fn mmd_point_masses_far_apart() {
        let a = [[0.0]; 4];
        let b = [[10.0]; 4];
        let a: Vec<&[f64]> = a.iter().map(|v| v.as_slice()).collect();
        let b: Vec<&[f64]> = b.iter().map(|v| v.as_slice()).collect();
        // Within-group kernels are 1, cross kernels e^{-50}: 1 + 1 − 2e^{-50}.
        let v = mmd_with_bandwidth(&a, &b, 1.0).unwrap();
        assert!((v - (2.0 - 2.0 * (-50f64).exp())).abs() < 1e-12);
        assert!(v > 0.9);
    }

    #[test]
    fn mmd_rejects_single_group() {
        let ds = Dataset::new("s", 1, vec![FactualSample::new(vec![0.0], Treatment::Control, 0.0)]).unwrap();
        assert!(mmd_imbalance(&ds).is_err());
    }

    #[test]
    fn median_distance_even_and_odd() {
        let p = [[0.0], [1.0], [3.0]];
        let p: Vec<&[f64]> = p.iter().map(|v| v.as_slice()).collect();
        // Distances 1, 3, 2.
        assert_eq!(median_pairwise_distance(&p), 2.0);
        let q = [[0.0], [1.0], [3.0], [7.0]];
        let q: Vec<&[f64]> = q.iter().map(|v| v.as_slice()).collect();
        // Squared distances 1, 9, 49, 4, 36, 16; middle pair 9 and 16.
        assert_eq!(median_pairwise_distance(&q), 12.5f64.sqrt());
    }

    proptest! {
        #[test]
        fn ate_error_bounded_by_pehe(
            effects in proptest::collection::vec(-5.0f64..5.0, 1..30),
            slope in -2.0f64..2.0,
            offset in -3.0f64..3.0,
        ) {
            let ds = with_effects(&effects);
            let h = move |x: &[f64], t: Treatment| t.as_f64() * (offset + slope * x[0]);
            prop_assert!(ate_error(&h, &ds).unwrap() <= sqrt_pehe(&h, &ds).unwrap() + 1e-12);
        }

        #[test]
        fn mmd_symmetric_and_permutation_invariant(
            a in proptest::collection::vec(-3.0f64..3.0, 2..12),
            b in proptest::collection::vec(-3.0f64..3.0, 2..12),
        ) {
            let v = mmd_imbalance(&two_groups(&a, &b)).unwrap();
            let swapped = mmd_imbalance(&two_groups(&b, &a)).unwrap();
            let mut ra = a.clone();
            ra.reverse();
            let permuted = mmd_imbalance(&two_groups(&ra, &b)).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert!((v - swapped).abs() < 1e-12);
            prop_assert!((v - permuted).abs() < 1e-12);
        }
    }
}
