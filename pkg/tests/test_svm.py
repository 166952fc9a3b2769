import json

import numpy as np
from hypothesis import given, strategies as st

from netprofile.baselines.svm import LinearSvmModel, hinge_objective, hinge_subgradient, svm_train


def test_one_dimensional_threshold():
    X = np.concatenate([np.linspace(-3, -1, 20), np.linspace(1, 3, 20)])[:, None]
    y = np.array([0] * 20 + [1] * 20)
    m = svm_train(X, y, lam=1e-2, epochs=50, seed=0)
    assert np.array_equal(m.predict(X), y)
    # the separating point of the positive-class scorer lies between the clusters
    w, b = m.W[1, 0] / m.scale[0], m.b[1] - m.W[1, 0] * m.mean[0] / m.scale[0]
    assert -1 < -b / w < 1


def test_duplicated_data_has_identical_objective():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 4))
    t = np.where(rng.uniform(size=30) > 0.5, 1.0, -1.0)
    w, b = rng.normal(size=4), 0.3
    assert abs(hinge_objective(w, b, X, t, 0.1) - hinge_objective(w, b, np.vstack([X, X]), np.concatenate([t, t]), 0.1)) < 1e-12


@given(st.integers(0, 10_000))
def test_subgradient_matches_finite_differences_off_kinks(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(12, 3))
    t = np.where(rng.uniform(size=12) > 0.5, 1.0, -1.0)
    w, b, lam = rng.normal(size=3), float(rng.normal()), 0.05
    margins = 1 - t * (X @ w + b)
    if np.min(np.abs(margins)) < 1e-3:
        return
    gw, gb = hinge_subgradient(w, b, X, t, lam)
    eps = 1e-7
    for j in range(3):
        e = np.zeros(3)
        e[j] = eps
        num = (hinge_objective(w + e, b, X, t, lam) - hinge_objective(w - e, b, X, t, lam)) / (2 * eps)
        assert abs(num - gw[j]) < 1e-6
    num = (hinge_objective(w, b + eps, X, t, lam) - hinge_objective(w, b - eps, X, t, lam)) / (2 * eps)
    assert abs(num - gb) < 1e-6


def test_training_lowers_objective_and_is_deterministic():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 5))
    y = (X @ np.array([1.0, -2, 0, 0.5, 0]) > 0).astype(int)
    a = svm_train(X, y, seed=4)
    b = svm_train(X, y, seed=4)
    assert np.array_equal(a.W, b.W)
    Z = (X - a.mean) / a.scale
    t = np.where(y == 1, 1.0, -1.0)
    assert hinge_objective(a.W[1], a.b[1], Z, t, a.lam) < hinge_objective(np.zeros(5), 0.0, Z, t, a.lam)
    assert np.mean(a.predict(X) == y) > 0.95


def test_absent_class_is_never_predicted_and_json_round_trips():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 2))
    y = np.where(X[:, 0] > 0, 2, 0)
    m = svm_train(X, y, n_classes=4, seed=0)
    assert set(m.predict(rng.normal(size=(100, 2)) * 5)) <= {0, 2}
    back = LinearSvmModel.from_json(json.loads(json.dumps(m.to_json())))
    assert np.array_equal(back.predict(X), m.predict(X))
