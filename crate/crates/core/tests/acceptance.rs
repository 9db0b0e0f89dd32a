mod common;

use std::time::{Duration, Instant};

use cocoa::augment::{augment, AugmentSpec};
use cocoa::data::{save_csv, split, SplitSpec};
use cocoa::estimators::{fit, BaseLearnerSpec, MetaLearner};
use cocoa::experiment::{run_experiment, write_outputs, ExperimentConfig, ResultRow};
use cocoa::imputers::{gp_impute, linear_impute, KernelKind, KernelSpec};
use cocoa::linalg::{Cholesky, SymMatrix};
use cocoa::metrics::sqrt_pehe;
use cocoa::neuralnet::{backward, Activation, Loss, Mlp, MlpSpec, OutputActivation};
use cocoa::synthetic::{gen_linear, Assignment, LinearGenSpec};
use cocoa::theory::{
    check_generalization_bound, check_neighbor_bound, check_rct_consistency, check_rct_negative_control,
    BoundCheckConfig,
};
use common::*;
use rand::Rng;

/// Criteria that are expected to fail; see the README for the analysis.
const KNOWN_RED: &[usize] = &[5];

type Outcome = Result<(bool, String), String>;

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut r = rng(1000 + seed);
        let mut sizes = vec![r.random_range(1..=6)];
        for _ in 0..r.random_range(1..=3) {
            sizes.push(r.random_range(1..=8));
        }
        let act = if seed % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let (out, loss) = if seed % 3 == 0 {
            (OutputActivation::Sigmoid, Loss::Bce)
        } else {
            (OutputActivation::Identity, Loss::Mse)
        };
        let mut spec = MlpSpec::new(sizes.clone(), act, out);
        spec.init_seed = seed;
        let mut net = Mlp::new(&spec).map_err(|e| e.to_string())?;
        // Zero biases can leave a ReLU pre-activation exactly on its kink.
        for p in net.params_mut() {
            *p += r.random_range(-0.1..0.1);
        }
        let n = r.random_range(1..=8);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..sizes[0]).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let out_dim = *sizes.last().unwrap();
        let ts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..out_dim).map(|_| if loss == Loss::Bce { r.random_range(0.0..1.0) } else { r.random_range(-2.0..2.0) }).collect())
            .collect();
        let (_, grads) = backward(&net, &xs, &ts, loss).map_err(|e| e.to_string())?;
        let mut p = net.params().to_vec();
        let h = 1e-5;
        for k in 0..p.len() {
            let orig = p[k];
            p[k] = orig + h;
            let up = naive_loss(&sizes, act, out, &p, &xs, &ts, loss);
            p[k] = orig - h;
            let down = naive_loss(&sizes, act, out, &p, &xs, &ts, loss);
            p[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max((grads[k] - numeric).abs() / grads[k].abs().max(numeric.abs()).max(1e-6));
        }
    }
    Ok((worst < 1e-4, format!("20 configs, worst relative error {worst:.2e}")))
}

fn imputer_oracles() -> Outcome {
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    let kinds = [KernelKind::DotProduct, KernelKind::Rbf, KernelKind::Matern32];
    let (mut gp_done, mut lin_done) = (0, 0);
    while gp_done < 100 || lin_done < 100 {
        let set = random_neighbor_set(&mut r, 50, 10);
        let n = set.points.len();
        let d = set.query.len();
        let kind = kinds[gp_done % 3];
        let spec = KernelSpec::new(kind);
        let gram = SymMatrix::from_fn(n, |i, j| kernel(&spec, &set.points[i].0, &set.points[j].0));
        let gp_ok = (kind != KernelKind::DotProduct || n <= d + 1) && Cholesky::factor(&gram, spec.jitter).is_some();
        if gp_ok && gp_done < 100 {
            let gp = gp_impute(&set, &spec).map_err(|e| e.to_string())?;
            let want = gp_oracle(&set, &spec, spec.jitter);
            worst = worst.max((gp - want).abs() / want.abs().max(1.0));
            gp_done += 1;
        }
        if n >= d + 3 && lin_done < 100 {
            let lin = linear_impute(&set).map_err(|e| e.to_string())?;
            let want = linear_oracle(&set);
            worst = worst.max((lin - want).abs() / want.abs().max(1.0));
            lin_done += 1;
        }
    }
    Ok((worst < 1e-8, format!("100 GP and 100 linear instances, worst scaled difference {worst:.2e}")))
}

fn augmentation_invariants() -> Outcome {
    let mut r = rng(77);
    for case in 0..20u64 {
        let n = r.random_range(40..200);
        let d = r.random_range(1..6);
        let k = r.random_range(1..8);
        let mut g = LinearGenSpec::new(n, d, case);
        if d == 1 {
            g.assignment = Assignment::Randomized(0.4);
        }
        let ds = gen_linear(&g).map_err(|e| e.to_string())?;
        let mut spec = AugmentSpec { min_neighbors: k, seed: case, ..AugmentSpec::default() };
        spec.contrastive.embedding = MlpSpec::new(vec![0, 16, 8], Activation::Relu, OutputActivation::Identity);
        spec.contrastive.radius = r.random_range(0.3..3.0);
        let rep = augment(&ds, &spec).map_err(|e| e.to_string())?;

        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        save_csv(&ds, dir.path().join("f.csv")).map_err(|e| e.to_string())?;
        save_csv(&rep.augmented, dir.path().join("a.csv")).map_err(|e| e.to_string())?;
        let f = std::fs::read_to_string(dir.path().join("f.csv")).map_err(|e| e.to_string())?;
        let a = std::fs::read_to_string(dir.path().join("a.csv")).map_err(|e| e.to_string())?;
        if !a.starts_with(&f) {
            return Ok((false, format!("config {case}: factual rows altered")));
        }
        for rec in &rep.added {
            let row = &rep.augmented.samples()[n + rep.added.iter().position(|x| x == rec).unwrap()];
            if row.t != ds.get(rec.source_index).t.flip() || rec.neighbor_count < k {
                return Ok((false, format!("config {case}: bad added record {rec:?}")));
            }
        }
        if !(0.0..=0.5).contains(&rep.alpha) {
            return Ok((false, format!("config {case}: alpha {}", rep.alpha)));
        }
        let zero = AugmentSpec { query_radius: Some(0.0), ..spec.clone() };
        let none = cocoa::augment::augment_with_classifier(&ds, rep.classifier.clone(), &zero).map_err(|e| e.to_string())?;
        if none.alpha != 0.0 {
            return Ok((false, format!("config {case}: radius 0 gave alpha {}", none.alpha)));
        }
    }
    Ok((true, "20 configs".into()))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 { (v[m - 1] + v[m]) / 2.0 } else { v[m] }
}

fn default_rows() -> Result<Vec<ResultRow>, String> {
    run_experiment(&ExperimentConfig::default()).map(|o| o.rows).map_err(|e| e.to_string())
}

fn balance(rows: &[ResultRow]) -> Outcome {
    let pick = |f: fn(&ResultRow) -> f64| {
        median(rows.iter().filter(|r| r.augmented && r.learner == "t_learner").map(f).collect())
    };
    let before = pick(|r| r.mmd_before);
    let after = pick(|r| r.mmd_after);
    Ok((after <= before, format!("median MMD before {before:.4}, after {after:.4}")))
}

fn directional(rows: &[ResultRow]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for learner in ["s_learner", "t_learner"] {
        let get = |aug: bool| -> Vec<(u64, f64)> {
            let mut v: Vec<_> = rows
                .iter()
                .filter(|r| r.learner == learner && r.augmented == aug)
                .map(|r| (r.seed, r.sqrt_pehe))
                .collect();
            v.sort_by_key(|p| p.0);
            v
        };
        let (plain, aug) = (get(false), get(true));
        let m_plain = median(plain.iter().map(|p| p.1).collect());
        let m_aug = median(aug.iter().map(|p| p.1).collect());
        let worst = plain.iter().zip(&aug).map(|(p, a)| a.1 / p.1).fold(0.0, f64::max);
        ok &= m_aug <= m_plain && worst <= 1.05;
        parts.push(format!("{learner} median {m_plain:.4} -> {m_aug:.4}, worst ratio {worst:.2}"));
    }
    Ok((ok, parts.join("; ")))
}

fn rct() -> Outcome {
    let pos = check_rct_consistency(10_000, 0).map_err(|e| e.to_string())?;
    let neg = check_rct_negative_control(10_000, 0).map_err(|e| e.to_string())?;
    Ok((
        pos.statistic < 0.05 && neg.statistic > neg.bound,
        format!("RCT gap {:.4}, biased gap {:.4} vs tolerance {:.4}", pos.statistic, neg.statistic, neg.bound),
    ))
}

fn neighbor_bound() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [1, 10, 50, 200] {
        let r = check_neighbor_bound(&[0.0], 0.5, m, 2000, m as u64).map_err(|e| e.to_string())?;
        ok &= r.passed;
        parts.push(format!("M={m} {:.4}<={:.4}", r.statistic, r.bound));
    }
    Ok((ok, parts.join(", ")))
}

fn generalization_bound() -> Outcome {
    let cfg = BoundCheckConfig::default();
    let mut passed = 0;
    for seed in 0..10 {
        passed += usize::from(check_generalization_bound(&cfg, seed).map_err(|e| e.to_string())?.passed);
    }
    Ok((passed >= 9, format!("{passed}/10 seeds")))
}

fn noiseless_recovery() -> Outcome {
    let mut g = LinearGenSpec::new(1500, 10, 0);
    g.noise_sd = 0.0;
    let ds = gen_linear(&g).map_err(|e| e.to_string())?;
    let (train, test) = split(&ds, &SplitSpec::default()).map_err(|e| e.to_string())?;
    let model = fit(&train, MetaLearner::T, &BaseLearnerSpec::ridge(1e-3), 0).map_err(|e| e.to_string())?;
    let pehe = sqrt_pehe(&model, &test).map_err(|e| e.to_string())?;
    Ok((pehe < 1e-2, format!("held-out sqrt PEHE {pehe:.2e}")))
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig { seeds: vec![0, 1], ..ExperimentConfig::default() };
    let mut files = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
        write_outputs(&out, dir.path()).map_err(|e| e.to_string())?;
        files.push(std::fs::read(dir.path().join("results.csv")).map_err(|e| e.to_string())?);
    }
    Ok((files[0] == files[1], format!("{} bytes", files[0].len())))
}

fn main() {
    let mut rows: Option<Vec<ResultRow>> = None;
    let shared = |slot: &mut Option<Vec<ResultRow>>| -> Result<Vec<ResultRow>, String> {
        if slot.is_none() {
            *slot = Some(default_rows()?);
        }
        Ok(slot.clone().unwrap())
    };
    let budgets = [10, 5, 60, 300, 600, 60, 60, 300, 10, 600].map(Duration::from_secs);
    let names = [
        "gradient correctness",
        "imputer oracle equivalence",
        "augmentation invariants",
        "balance reduction",
        "directional PEHE improvement",
        "RCT loss consistency",
        "empty-neighborhood bound",
        "generalization bound",
        "noiseless recovery",
        "determinism",
    ];
    let mut unexpected = 0;
    for (idx, name) in names.iter().enumerate() {
        let c = idx + 1;
        let start = Instant::now();
        let outcome = match c {
            1 => gradients(),
            2 => imputer_oracles(),
            3 => augmentation_invariants(),
            4 => shared(&mut rows).and_then(|r| balance(&r)),
            5 => shared(&mut rows).and_then(|r| directional(&r)),
            6 => rct(),
            7 => neighbor_bound(),
            8 => generalization_bound(),
            9 => noiseless_recovery(),
            _ => determinism(),
        };
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok((_, d)) if elapsed > budgets[idx] => (false, format!("{d}; over budget {:?}", budgets[idx])),
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        let known = KNOWN_RED.contains(&c);
        let tag = match (pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {c:>2} {tag}: {name} - {detail} [{:.1}s]", elapsed.as_secs_f64());
        if !pass && !known {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
