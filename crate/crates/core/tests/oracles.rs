mod common;

use cocoa::imputers::{gp_impute, linear_impute, KernelKind, KernelSpec, NeighborSet};
use cocoa::linalg::{Cholesky, SymMatrix};
use cocoa::neuralnet::{backward, Activation, Loss, Mlp, MlpSpec, OutputActivation};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn random_config(seed: u64) -> (Mlp, Vec<Vec<f64>>, Vec<Vec<f64>>, Loss) {
    let mut r = rng(seed);
    let depth = r.random_range(1..=3);
    let mut sizes = vec![r.random_range(1..=5)];
    for _ in 0..depth {
        sizes.push(r.random_range(1..=6));
    }
    let act = if r.random_bool(0.5) { Activation::Tanh } else { Activation::Relu };
    let (out, loss) = if r.random_bool(0.5) {
        (OutputActivation::Sigmoid, Loss::Bce)
    } else {
        (OutputActivation::Identity, Loss::Mse)
    };
    let mut spec = MlpSpec::new(sizes.clone(), act, out);
    spec.init_seed = seed;
    let mut net = Mlp::new(&spec).unwrap();
    for p in net.params_mut() {
        *p += r.random_range(-0.1..0.1);
    }
    let n = r.random_range(1..=6);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..sizes[0]).map(|_| r.random_range(-1.5..1.5)).collect()).collect();
    let ts: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..*sizes.last().unwrap())
                .map(|_| if loss == Loss::Bce { r.random_range(0.0..1.0) } else { r.random_range(-2.0..2.0) })
                .collect()
        })
        .collect();
    (net, xs, ts, loss)
}

#[test]
fn backward_matches_independent_finite_differences() {
    let h = 1e-5;
    for seed in 0..25 {
        let (net, xs, ts, loss) = random_config(seed);
        let (_, grads) = backward(&net, &xs, &ts, loss).unwrap();
        let mut p = net.params().to_vec();
        for k in 0..p.len() {
            let orig = p[k];
            p[k] = orig + h;
            let up = naive_loss(net.sizes(), net.activation(), net.output_activation(), &p, &xs, &ts, loss);
            p[k] = orig - h;
            let down = naive_loss(net.sizes(), net.activation(), net.output_activation(), &p, &xs, &ts, loss);
            p[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (grads[k] - numeric).abs() / grads[k].abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "seed {seed} param {k}: analytic {} numeric {numeric}", grads[k]);
        }
    }
}

#[test]
fn forward_matches_naive_forward() {
    for seed in 0..20 {
        let (net, xs, _, _) = random_config(seed);
        for x in &xs {
            let (naive, _) = naive_forward(net.sizes(), net.activation(), net.output_activation(), net.params(), x);
            let got = net.forward(x).unwrap();
            for (a, b) in got.iter().zip(&naive) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

fn no_escalation(set: &NeighborSet, spec: &KernelSpec) -> bool {
    let n = set.points.len();
    let k = SymMatrix::from_fn(n, |i, j| kernel(spec, &set.points[i].0, &set.points[j].0));
    Cholesky::factor(&k, spec.jitter).is_some()
}

/// Random set whose linear system is well posed: at least `d + 3` points for
/// the local linear fit, at most `d + 1` for the rank-limited dot-product kernel.
fn well_posed_set(r: &mut rand_chacha::ChaCha8Rng, kind: Option<KernelKind>) -> NeighborSet {
    loop {
        let set = random_neighbor_set(r, 50, 10);
        let n = set.points.len();
        let d = set.query.len();
        let ok = match kind {
            None => n >= d + 3,
            Some(KernelKind::DotProduct) => n <= d + 1,
            Some(_) => true,
        };
        if ok {
            return set;
        }
    }
}

#[test]
fn gp_matches_dense_oracle() {
    let mut r = rng(11);
    let mut checked = 0;
    for case in 0..300 {
        let kind = [KernelKind::DotProduct, KernelKind::Rbf, KernelKind::Matern32][case % 3];
        let set = well_posed_set(&mut r, Some(kind));
        let spec = KernelSpec {
            length_scale: r.random_range(0.5..2.0),
            ..KernelSpec::new(kind)
        };
        if !no_escalation(&set, &spec) {
            continue;
        }
        let got = gp_impute(&set, &spec).unwrap();
        let want = gp_oracle(&set, &spec, spec.jitter);
        assert!((got - want).abs() < 1e-8 * want.abs().max(1.0), "case {case} {kind:?}: {got} vs {want}");
        checked += 1;
    }
    assert!(checked >= 100, "only {checked} instances checked");
}

#[test]
fn linear_matches_dense_oracle() {
    let mut r = rng(12);
    for case in 0..100 {
        let set = well_posed_set(&mut r, None);
        let got = linear_impute(&set).unwrap();
        let want = linear_oracle(&set);
        assert!((got - want).abs() < 1e-8 * want.abs().max(1.0), "case {case}: {got} vs {want}");
    }
}

fn distinct_points(d: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, d), n).prop_filter("well separated", |pts| {
        pts.iter().enumerate().all(|(i, a)| {
            pts[..i]
                .iter()
                .all(|b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() > 0.5)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gp_interpolates_with_zero_jitter(
        pts in distinct_points(2, 5),
        ys in proptest::collection::vec(-2.0f64..2.0, 5),
        k in 0usize..5,
    ) {
        let spec = KernelSpec { jitter: 0.0, length_scale: 0.5, ..KernelSpec::new(KernelKind::Rbf) };
        let set = NeighborSet::new(pts[k].clone(), pts.iter().cloned().zip(ys.iter().copied()).collect());
        prop_assert!((gp_impute(&set, &spec).unwrap() - ys[k]).abs() < 1e-6);
    }

    #[test]
    fn gp_is_linear_in_outcomes(
        pts in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 1..12),
        seed in 0u64..1000,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let mut r = rng(seed);
        let y1: Vec<f64> = pts.iter().map(|_| r.random_range(-1.0..1.0)).collect();
        let y2: Vec<f64> = pts.iter().map(|_| r.random_range(-1.0..1.0)).collect();
        let q = vec![0.3, -0.2, 0.5];
        let set = |ys: Vec<f64>| NeighborSet::new(q.clone(), pts.iter().cloned().zip(ys).collect());
        let spec = KernelSpec::new(KernelKind::Rbf);
        let combo: Vec<f64> = y1.iter().zip(&y2).map(|(u, v)| a * u + b * v).collect();
        let lhs = gp_impute(&set(combo), &spec).unwrap();
        let rhs = a * gp_impute(&set(y1), &spec).unwrap() + b * gp_impute(&set(y2), &spec).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0) * 10.0);
    }

    #[test]
    fn imputers_ignore_neighbor_order(seed in 0u64..10_000, shift in 1usize..50) {
        let mut r = rng(seed);
        let set = loop {
            let s = random_neighbor_set(&mut r, 20, 4);
            if s.points.len() >= s.query.len() + 3 {
                break s;
            }
        };
        let mut rotated = set.clone();
        let len = rotated.points.len();
        rotated.points.rotate_left(shift % len);
        let spec = KernelSpec::new(KernelKind::Matern32);
        prop_assert!((gp_impute(&set, &spec).unwrap() - gp_impute(&rotated, &spec).unwrap()).abs() < 1e-8);
        prop_assert!((linear_impute(&set).unwrap() - linear_impute(&rotated).unwrap()).abs() < 1e-8);
    }
}
