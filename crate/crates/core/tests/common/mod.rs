#![allow(dead_code)]

use cocoa::data::{Dataset, FactualSample, Treatment};
use cocoa::imputers::{KernelKind, KernelSpec, NeighborSet};
use cocoa::neuralnet::{Activation, Loss, OutputActivation};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian elimination with partial pivoting on a dense copy.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, &bi)| {
        let mut r = row.clone();
        r.push(bi);
        r
    }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

pub fn kernel(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    match spec.kind {
        KernelKind::DotProduct => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() + spec.sigma0_sq,
        KernelKind::Rbf => (-d2 / (2.0 * spec.length_scale.powi(2))).exp(),
        KernelKind::Matern32 => {
            let u = 3f64.sqrt() * d2.sqrt() / spec.length_scale;
            (1.0 + u) * (-u).exp()
        }
    }
}

/// `ȳ + k_xᵀ (K + jI)⁻¹ (y − ȳ)` by dense elimination.
pub fn gp_oracle(set: &NeighborSet, spec: &KernelSpec, jitter: f64) -> f64 {
    let n = set.points.len();
    let mean = set.points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| kernel(spec, &set.points[i].0, &set.points[j].0) + if i == j { jitter } else { 0.0 })
                .collect()
        })
        .collect();
    let y: Vec<f64> = set.points.iter().map(|p| p.1 - mean).collect();
    let alpha = dense_solve(&k, &y);
    mean + set.points.iter().zip(&alpha).map(|(p, a)| kernel(spec, &set.query, &p.0) * a).sum::<f64>()
}

/// Intercept least squares with ridge `1e-8 · trace(XᵀX) / cols`.
pub fn linear_oracle(set: &NeighborSet) -> f64 {
    let rows: Vec<Vec<f64>> = set.points.iter().map(|(x, _)| std::iter::once(1.0).chain(x.iter().copied()).collect()).collect();
    let p = rows[0].len();
    let trace: f64 = rows.iter().flatten().map(|v| v * v).sum();
    let lambda = 1e-8 * trace / p as f64;
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for (r, (_, y)) in rows.iter().zip(&set.points) {
        for i in 0..p {
            b[i] += r[i] * y;
            for j in 0..p {
                a[i][j] += r[i] * r[j];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += lambda;
    }
    let beta = dense_solve(&a, &b);
    beta[0] + beta[1..].iter().zip(&set.query).map(|(b, x)| b * x).sum::<f64>()
}

pub fn random_neighbor_set(rng: &mut ChaCha8Rng, max_n: usize, max_d: usize) -> NeighborSet {
    let n = rng.random_range(1..=max_n);
    let d = rng.random_range(1..=max_d);
    let point = |rng: &mut ChaCha8Rng| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
    let points = (0..n).map(|_| (point(rng), rng.random_range(-3.0..3.0))).collect();
    NeighborSet::new(point(rng), points)
}

/// Independent forward pass over the flat layout: per layer an `out × in`
/// row-major weight block followed by the biases.
pub fn naive_forward(sizes: &[usize], act: Activation, out: OutputActivation, params: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut a = x.to_vec();
    let mut z = Vec::new();
    let mut off = 0;
    let layers = sizes.len() - 1;
    for l in 0..layers {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let w = &params[off..off + n_in * n_out];
        let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;
        z = (0..n_out).map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * a[i]).sum::<f64>()).collect();
        a = if l + 1 < layers {
            z.iter().map(|&v| match act {
                Activation::Relu => v.max(0.0),
                Activation::Tanh => v.tanh(),
            }).collect()
        } else {
            z.iter().map(|&v| match out {
                OutputActivation::Identity => v,
                OutputActivation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            }).collect()
        };
    }
    (a, z)
}

pub fn naive_loss(sizes: &[usize], act: Activation, out: OutputActivation, params: &[f64], xs: &[Vec<f64>], ts: &[Vec<f64>], loss: Loss) -> f64 {
    let mut total = 0.0;
    for (x, t) in xs.iter().zip(ts) {
        let (a, z) = naive_forward(sizes, act, out, params, x);
        let per: f64 = match loss {
            Loss::Mse => a.iter().zip(t).map(|(y, t)| (y - t).powi(2)).sum(),
            Loss::Bce => z.iter().zip(t).map(|(&z, &t)| {
                let p = 1.0 / (1.0 + (-z).exp());
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            }).sum(),
        };
        total += per / t.len() as f64;
    }
    total / xs.len() as f64
}

/// Small dataset with both arms and ground truth.
pub fn toy_dataset(n: usize, d: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let samples = (0..n)
        .map(|k| {
            let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
            let t = if k % 2 == 0 { Treatment::Control } else { Treatment::Treated };
            let mu0: f64 = x.iter().sum();
            let mu1 = mu0 + 1.0;
            let y = if t == Treatment::Treated { mu1 } else { mu0 } + r.random_range(-0.1..0.1);
            FactualSample::new(x, t, y).with_truth(mu0, mu1)
        })
        .collect();
    Dataset::new("toy", d, samples).unwrap()
}
