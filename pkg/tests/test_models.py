import numpy as np
import pytest

from netprofile import nn
from netprofile.dataset import ACTIVITIES, APPS, LabeledSet
from netprofile.errors import EmptyClass, ShapeMismatch
from netprofile.models import (
    AppClassifier,
    Ensemble,
    app_forward,
    app_loss_grads,
    block_order,
    confusion_csv,
    evaluate,
    full_order,
    route,
    train,
)
from netprofile.preprocess import POOLED_LEN


def toy_set(n_per=4, seed=0):
    """Each (app, activity) class gets a distinct constant level in channel 2."""
    rng = np.random.default_rng(seed)
    rows, apps, acts = [], [], []
    level = 0
    for a, name in enumerate(APPS):
        for j in range(max(1, len(ACTIVITIES[name]))):
            level += 1
            for _ in range(n_per):
                x = np.zeros((POOLED_LEN, 6))
                x[:, 2] = level * 0.3 + rng.normal(0, 0.01, POOLED_LEN)
                rows.append(x)
                apps.append(a)
                acts.append(j if ACTIVITIES[name] else -1)
    n = len(rows)
    return LabeledSet(np.array(rows), np.zeros((n, 15)), np.array(apps), np.array(acts), [f"k{i}" for i in range(n)])


def test_block_order_reads_blocks_back_to_front():
    assert block_order([1]).tolist() == list(range(31, 15, -1))
    order = full_order()
    assert sorted(order.tolist()) == list(range(POOLED_LEN))
    assert order[0] == POOLED_LEN - 1 and order[-1] == 0


def test_zero_params_give_uniform_softmax():
    out = app_forward(AppClassifier.zeros(), np.random.default_rng(0).normal(size=(3, POOLED_LEN, 6)))
    assert np.max(np.abs(out.softmax - 0.2)) <= 1e-12
    assert np.all(out.cell_states == 0)


def test_app_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    model = AppClassifier.init(3, hidden=3)
    x = rng.normal(size=(2, POOLED_LEN, 6)) * 0.5
    y = np.array([1, 4])
    _, g = app_loss_grads(model, x, y)
    tensors = model.named_tensors()
    # a handful of entries per tensor keeps this quick
    for name in ("head.W", "cell0.U_f", "cell3.W_c", "cell1.b_i"):
        arr = tensors[name].reshape(-1)
        for j in rng.choice(arr.size, size=min(3, arr.size), replace=False):
            orig = arr[j]
            arr[j] = orig + 1e-5
            up = nn.softmax_xent(model.head(np.concatenate([t for t in _finals(model, x)], axis=1)), y)[0]
            arr[j] = orig - 1e-5
            down = nn.softmax_xent(model.head(np.concatenate([t for t in _finals(model, x)], axis=1)), y)[0]
            arr[j] = orig
            num = (up - down) / 2e-5
            assert abs(num - g[name].reshape(-1)[j]) <= 1e-5 * max(1e-6, abs(num))  + 1e-9


def _finals(model, x):
    out = app_forward(model, x)
    return [out.final_thetas[:, k] for k in range(out.final_thetas.shape[1])]


def test_pooled_shape_is_checked():
    with pytest.raises(ShapeMismatch):
        app_forward(AppClassifier.zeros(hidden=2), np.zeros((2, 100, 6)))


def test_route_threshold_is_inclusive():
    assert route(np.array([0.5, 0.3, 0.2]), 0.5) == 0
    assert route(np.array([0.49, 0.31, 0.2]), 0.5) is None
    assert route(np.array([0.1, 0.9]), 0.0) == 1


def test_training_is_deterministic_and_learns():
    data = toy_set()
    a, b = Ensemble.init(7), Ensemble.init(7)
    la = train(a, data, n_batches=3, batch_size=8, seed=7)
    lb = train(b, data, n_batches=3, batch_size=8, seed=7)
    assert la.app == lb.app
    for k, v in a.app.named_tensors().items():
        assert np.array_equal(v, b.app.named_tensors()[k])


def test_zero_batches_leave_init_untouched():
    data = toy_set()
    ens = Ensemble.init(2)
    before = {k: v.copy() for k, v in ens.app.named_tensors().items()}
    log = train(ens, data, n_batches=0, seed=2)
    assert log.app == []
    assert all(np.array_equal(before[k], v) for k, v in ens.app.named_tensors().items())


def test_missing_class_raises():
    data = toy_set()
    keep = np.flatnonzero(data.app != APPS.index("gmail"))
    with pytest.raises(EmptyClass):
        train(Ensemble.init(0), data.subset(keep), n_batches=1)
    keep = np.flatnonzero(~((data.app == APPS.index("youtube")) & (data.act == 1)))
    with pytest.raises(EmptyClass):
        train(Ensemble.init(0), data.subset(keep), n_batches=1)


def test_save_load_round_trip(tmp_path):
    ens = Ensemble.init(5)
    ens.save(str(tmp_path))
    back = Ensemble.load(str(tmp_path))
    x = toy_set(1).pooled
    np.testing.assert_array_equal(ens.app_output(x).softmax, back.app_output(x).softmax)
    for app in ens.activity:
        np.testing.assert_array_equal(ens.activity_probs(app, x), back.activity_probs(app, x))


def test_predict_routes_only_confident_routed_apps():
    ens = Ensemble.init(1)
    ens.app.head.W[:] = 0
    ens.app.head.b[:] = 0
    ens.app.head.b[APPS.index("youtube")] = 10.0
    preds = ens.predict(toy_set(1).pooled)
    assert all(p.app == APPS.index("youtube") and p.routed and p.activity in (0, 1) for p in preds)
    ens.tau = 1.0
    assert not any(p.routed for p in ens.predict(toy_set(1).pooled))
    ens.tau = 0.5
    ens.app.head.b[:] = 0
    ens.app.head.b[APPS.index("gmail")] = 10.0
    assert not any(p.routed for p in ens.predict(toy_set(1).pooled))


class Fixed:
    def __init__(self, app_pred, act_pred):
        self.app_pred, self.act_pred = app_pred, act_pred

    def predict_app(self, ds):
        return self.app_pred[: len(ds)]

    def predict_activity(self, app, ds):
        return np.zeros(len(ds), dtype=np.int64) + self.act_pred


def test_evaluate_counts():
    data = toy_set(n_per=2)
    pred = data.app.copy()
    pred[:3] = APPS.index("impertinent")
    res = evaluate(Fixed(pred, 1), data)
    assert res["app"]["n"] == len(data)
    assert res["app"]["accuracy"] == pytest.approx((len(data) - 3) / len(data))
    cm = np.array(res["app"]["confusion"])
    assert cm.sum() == len(data) and np.trace(cm) == len(data) - 3
    # constant activity guess 1 is right on half of each routed app
    for app in ("facebook", "youtube", "whatsapp"):
        assert res["activity"][app]["accuracy"] == 0.5
    # the first three facebook streams are mispredicted; the fourth is post_image
    assert res["routed"]["facebook"]["accuracy"] == pytest.approx(1 / 4)
    csv = confusion_csv(res["app"]).splitlines()
    assert csv[0].split(",")[1:] == list(APPS) and len(csv) == 1 + len(APPS)
