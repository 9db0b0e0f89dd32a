"""Smoke test for the cocoa_py extension module.

Build and install first, e.g. `maturin build -m crates/py/Cargo.toml` and
`pip install target/wheels/cocoa_py-*.whl`.
"""

import math
import os
import tempfile

import cocoa_py


def main():
    ds = cocoa_py.generate(n=400, d=3, seed=1)
    assert len(ds) == 400 and ds.d == 3
    c, t = ds.group_sizes()
    assert c + t == 400 and c > 0 and t > 0
    assert ds.truth is not None

    train, test = ds.split(0.7, seed=0)
    model = cocoa_py.CateModel.fit(train, learner="t", base="ridge")
    res = model.evaluate(test)
    assert res["sqrt_pehe"] < 0.1, res

    aug = cocoa_py.augment(train, k=3, epsilon="10%", imputer="linear", epochs=2)
    assert 0.0 <= aug.alpha <= 0.5
    assert len(aug.dataset) == len(train) + aug.n_added
    assert aug.dataset.x[: len(train)] == train.x
    for src, tt in zip(aug.sources, aug.dataset.t[len(train):]):
        assert tt == 1 - train.t[src]
    none = cocoa_py.augment(train, k=3, radius=0.0, epochs=1)
    assert none.alpha == 0.0

    before = cocoa_py.mmd_imbalance(train)
    after = cocoa_py.mmd_imbalance(aug.dataset)
    print(f"alpha={aug.alpha:.3f} mmd {before:.4f} -> {after:.4f}")

    pts = [[0.0], [1.0], [2.0]]
    ys = [1.0, 3.0, 5.0]
    assert abs(cocoa_py.linear_impute([1.5], pts, ys) - 4.0) < 1e-6
    assert math.isfinite(cocoa_py.gp_impute([1.5], pts, ys, kernel="rbf"))

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.txt")
        model.save(path)
        again = cocoa_py.CateModel.load(path)
        assert again.predict_cate(test.x[:5]) == model.predict_cate(test.x[:5])
        csv = os.path.join(d, "d.csv")
        ds.save_csv(csv)
        assert cocoa_py.Dataset.load_csv(csv).y == ds.y

    check = cocoa_py.theory_check("neighbors", m=10)
    assert check["passed"], check

    try:
        cocoa_py.augment(train, k=0)
    except ValueError:
        pass
    else:
        raise AssertionError("k=0 must be rejected")

    rows = cocoa_py.run_experiment(
        'seeds = [0]\n[dataset]\nkind = "linear"\nn = 300\nd = 3\n'
        "[augment.contrastive.train]\nepochs = 1\n"
    )
    assert len(rows) == 4
    print(model, "sqrt_pehe", round(res["sqrt_pehe"], 4))
    print("smoke test passed")


if __name__ == "__main__":
    main()
