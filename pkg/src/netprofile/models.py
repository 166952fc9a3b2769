"""Recurrent ensemble application classifier and per-application activity classifiers.

The application model runs four LSTM cells (32 units each) over the pooled
series in reverse time order. With the default block assignment the first cell
sees the coarsest pooled blocks (trailing packets) and the last cell sees the
unpooled first 32 packets; each cell's final state seeds the next cell. A dense
head reads the concatenated final outputs of all four cells.

An activity model is a single cell over the same reversed series, each step
augmented with the application softmax and the last application cell state.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from netprofile import nn
from netprofile.dataset import ACTIVITIES, APPS, ROUTED_APPS, LabeledSet
from netprofile.errors import EmptyClass, ShapeMismatch
from netprofile.fsutil import atomic_write
from netprofile.preprocess import BLOCK, POOLED_LEN
from netprofile.rng import substream

HIDDEN = 32
POOLED_DIM = 6
DEFAULT_BLOCKS: Tuple[Tuple[int, ...], ...] = ((7, 6), (5, 4), (3, 2), (1, 0))
DEFAULT_TAU = 0.5
CLIP_NORM = 5.0


def block_order(blocks: Sequence[int]) -> np.ndarray:
    """Pooled-entry indices for ``blocks``, each block read back to front."""
    return np.concatenate([np.arange(b * BLOCK + BLOCK - 1, b * BLOCK - 1, -1) for b in blocks])


@dataclass
class AppClassifier:
    cells: List[nn.LstmParams]
    head: nn.DenseParams
    block_assignment: Tuple[Tuple[int, ...], ...] = DEFAULT_BLOCKS

    @classmethod
    def init(cls, rng_seed: int, hidden: int = HIDDEN, blocks=DEFAULT_BLOCKS) -> "AppClassifier":
        cells = [nn.LstmParams.init(hidden, POOLED_DIM, substream(rng_seed, f"init/app/cell/{k}")) for k in range(len(blocks))]
        head = nn.DenseParams.init(len(APPS), hidden * len(blocks), substream(rng_seed, "init/app/head"))
        return cls(cells, head, tuple(tuple(b) for b in blocks))

    @classmethod
    def zeros(cls, hidden: int = HIDDEN, blocks=DEFAULT_BLOCKS) -> "AppClassifier":
        return cls(
            [nn.LstmParams.zeros(hidden, POOLED_DIM) for _ in blocks],
            nn.DenseParams.zeros(len(APPS), hidden * len(blocks)),
            tuple(tuple(b) for b in blocks),
        )

    @property
    def orders(self) -> List[np.ndarray]:
        return [block_order(b) for b in self.block_assignment]

    def named_tensors(self) -> Dict[str, np.ndarray]:
        out = {}
        for k, cell in enumerate(self.cells):
            out.update({f"cell{k}.{n}": v for n, v in cell.tensors.items()})
        out.update({f"head.{n}": v for n, v in self.head.tensors.items()})
        return out

    def hparams(self) -> dict:
        return {
            "kind": "app",
            "hidden": self.cells[0].hidden,
            "inputs": POOLED_DIM,
            "classes": list(APPS),
            "block_assignment": [list(b) for b in self.block_assignment],
        }

    @classmethod
    def from_tensors(cls, hp: dict, tensors: Dict[str, np.ndarray]) -> "AppClassifier":
        blocks = tuple(tuple(b) for b in hp["block_assignment"])
        cells = [nn.lstm_from_tensors(f"cell{k}.", tensors) for k in range(len(blocks))]
        head = nn.DenseParams(tensors["head.W"], tensors["head.b"])
        return cls(cells, head, blocks)


@dataclass
class ActivityClassifier:
    app: str
    cell: nn.LstmParams
    head: nn.DenseParams

    @property
    def classes(self) -> Tuple[str, ...]:
        return ACTIVITIES[self.app]

    @classmethod
    def init(cls, app: str, rng_seed: int, gate_depth: int = 1, hidden: int = HIDDEN) -> "ActivityClassifier":
        rng = substream(rng_seed, f"init/activity/{app}")
        cell = nn.LstmParams.init(hidden, POOLED_DIM + len(APPS) + hidden, rng, gate_depth)
        return cls(app, cell, nn.DenseParams.init(len(ACTIVITIES[app]), hidden, rng))

    @classmethod
    def zeros(cls, app: str, gate_depth: int = 1, hidden: int = HIDDEN) -> "ActivityClassifier":
        cell = nn.LstmParams.zeros(hidden, POOLED_DIM + len(APPS) + hidden, gate_depth)
        return cls(app, cell, nn.DenseParams.zeros(len(ACTIVITIES[app]), hidden))

    def named_tensors(self) -> Dict[str, np.ndarray]:
        out = {f"cell.{n}": v for n, v in self.cell.tensors.items()}
        out.update({f"head.{n}": v for n, v in self.head.tensors.items()})
        return out

    def hparams(self) -> dict:
        return {
            "kind": "activity",
            "app": self.app,
            "hidden": self.cell.hidden,
            "inputs": self.cell.inputs,
            "gate_depth": self.cell.gate_depth,
            "classes": list(self.classes),
        }

    @classmethod
    def from_tensors(cls, hp: dict, tensors: Dict[str, np.ndarray]) -> "ActivityClassifier":
        cell = nn.lstm_from_tensors("cell.", tensors, hp.get("gate_depth", 1))
        return cls(hp["app"], cell, nn.DenseParams(tensors["head.W"], tensors["head.b"]))


@dataclass
class AppOutput:
    softmax: np.ndarray  # (B, 5)
    cell_states: np.ndarray  # (B, n_cells, H)
    final_thetas: np.ndarray  # (B, n_cells, H)


def _check_pooled(pooled: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(pooled, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (POOLED_LEN, POOLED_DIM):
        raise ShapeMismatch(f"pooled series must be (..., {POOLED_LEN}, {POOLED_DIM}), got {np.shape(pooled)}")
    return x, single


def _app_pass(model: AppClassifier, x: np.ndarray, keep_cache: bool):
    B = x.shape[0]
    H = model.cells[0].hidden
    c = np.zeros((B, H))
    caches, finals, states = [], [], []
    for cell, order in zip(model.cells, model.orders):
        thetas, c, cache = nn.lstm_forward_cached(cell, x[:, order], c)
        finals.append(thetas[:, -1])
        states.append(c)
        if keep_cache:
            caches.append(cache)
    feats = np.concatenate(finals, axis=1)
    logits = model.head(feats)
    return logits, feats, np.stack(states, axis=1), np.stack(finals, axis=1), caches


def app_forward(model: AppClassifier, pooled: np.ndarray) -> AppOutput:
    """Softmax over APPS plus every cell's final state and output."""
    x, single = _check_pooled(pooled)
    logits, _, states, finals, _ = _app_pass(model, x, keep_cache=False)
    out = AppOutput(nn.softmax(logits), states, finals)
    if single:
        return AppOutput(out.softmax[0], out.cell_states[0], out.final_thetas[0])
    return out


def app_loss_grads(model: AppClassifier, pooled: np.ndarray, labels: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    x, _ = _check_pooled(pooled)
    logits, feats, _, _, caches = _app_pass(model, x, keep_cache=True)
    loss, dlog = nn.softmax_xent(logits, labels)
    grads = {"head.W": dlog.T @ feats, "head.b": dlog.sum(axis=0)}
    dfeat = dlog @ model.head.W
    H = model.cells[0].hidden
    dc = None
    for k in range(len(model.cells) - 1, -1, -1):
        g, dc, _ = nn.lstm_backward(model.cells[k], caches[k], dtheta_last=dfeat[:, k * H : (k + 1) * H], dc_final=dc)
        grads.update({f"cell{k}.{n}": v for n, v in g.items()})
    return loss, grads


def activity_inputs(model_order: np.ndarray, pooled: np.ndarray, app_softmax: np.ndarray, app_cell: np.ndarray) -> np.ndarray:
    """Per-step input: pooled entry, then app softmax and app cell state repeated at every step."""
    B = pooled.shape[0]
    T = len(model_order)
    const = np.concatenate([app_softmax, app_cell], axis=1)
    return np.concatenate([pooled[:, model_order], np.broadcast_to(const[:, None, :], (B, T, const.shape[1]))], axis=2)


def full_order(app_model_blocks=DEFAULT_BLOCKS) -> np.ndarray:
    return np.concatenate([block_order(b) for b in app_model_blocks])


def activity_forward(
    model: ActivityClassifier,
    pooled: np.ndarray,
    app_softmax: np.ndarray,
    app_cell: np.ndarray,
    order: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Softmax over the app's activities."""
    x, single = _check_pooled(pooled)
    sm = np.atleast_2d(np.asarray(app_softmax, dtype=np.float64))
    cell = np.atleast_2d(np.asarray(app_cell, dtype=np.float64))
    if sm.shape != (x.shape[0], len(APPS)) or cell.shape != (x.shape[0], model.cell.hidden):
        raise ShapeMismatch("app softmax / cell state do not match the batch")
    order = full_order() if order is None else order
    static = np.concatenate([sm, cell], axis=1)
    thetas, _, _ = nn.lstm_forward_cached(model.cell, x[:, order], np.zeros((x.shape[0], model.cell.hidden)), static)
    probs = nn.softmax(model.head(thetas[:, -1]))
    return probs[0] if single else probs


def activity_loss_grads(
    model: ActivityClassifier, seq: np.ndarray, static: np.ndarray, labels: np.ndarray
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss and gradients for ordered pooled steps ``seq`` plus per-stream ``static`` inputs."""
    B = seq.shape[0]
    H = model.cell.hidden
    thetas, _, cache = nn.lstm_forward_cached(model.cell, seq, np.zeros((B, H)), static)
    last = thetas[:, -1]
    loss, dlog = nn.softmax_xent(model.head(last), labels)
    grads = {"head.W": dlog.T @ last, "head.b": dlog.sum(axis=0)}
    cell_grads, _, _ = nn.lstm_backward(model.cell, cache, dtheta_last=dlog @ model.head.W)
    grads.update({f"cell.{k}": v for k, v in cell_grads.items()})
    return loss, grads


def route(pred_softmax: np.ndarray, tau: float = DEFAULT_TAU) -> Optional[int]:
    """Argmax class if its probability reaches ``tau``, else None."""
    p = np.asarray(pred_softmax, dtype=np.float64)
    k = int(np.argmax(p))
    return k if p[k] >= tau else None


@dataclass
class Prediction:
    app: int
    app_softmax: np.ndarray
    activity: Optional[int] = None
    activity_softmax: Optional[np.ndarray] = None
    routed: bool = False


@dataclass
class Ensemble:
    """Application model plus one activity model per routed application."""

    app: AppClassifier
    activity: Dict[str, ActivityClassifier]
    tau: float = DEFAULT_TAU
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, seed: int, gate_depth: int = 1, tau: float = DEFAULT_TAU, blocks=DEFAULT_BLOCKS) -> "Ensemble":
        return cls(
            AppClassifier.init(seed, blocks=blocks),
            {a: ActivityClassifier.init(a, seed, gate_depth) for a in ROUTED_APPS},
            tau,
        )

    def app_output(self, pooled: np.ndarray, batch: int = 256) -> AppOutput:
        x, _ = _check_pooled(pooled)
        parts = [app_forward(self.app, x[i : i + batch]) for i in range(0, len(x), batch)]
        if not parts:
            n = len(self.app.cells)
            return AppOutput(np.zeros((0, len(APPS))), np.zeros((0, n, HIDDEN)), np.zeros((0, n, HIDDEN)))
        return AppOutput(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("softmax", "cell_states", "final_thetas")))

    def activity_probs(self, app: str, pooled: np.ndarray, out: Optional[AppOutput] = None, batch: int = 256) -> np.ndarray:
        x, _ = _check_pooled(pooled)
        out = self.app_output(x) if out is None else out
        order = full_order(self.app.block_assignment)
        model = self.activity[app]
        parts = [
            activity_forward(model, x[i : i + batch], out.softmax[i : i + batch], out.cell_states[i : i + batch, -1], order)
            for i in range(0, len(x), batch)
        ]
        return np.concatenate(parts) if parts else np.zeros((0, len(model.classes)))

    # evaluation protocol shared with the statistical baselines
    def predict_app(self, ds: LabeledSet) -> np.ndarray:
        return np.argmax(self.app_output(ds.pooled).softmax, axis=1)

    def predict_activity(self, app: str, ds: LabeledSet) -> np.ndarray:
        return np.argmax(self.activity_probs(app, ds.pooled), axis=1)

    def predict(self, pooled: np.ndarray) -> List[Prediction]:
        x, _ = _check_pooled(pooled)
        out = self.app_output(x)
        preds = [Prediction(int(np.argmax(p)), p) for p in out.softmax]
        for app, model in self.activity.items():
            a = APPS.index(app)
            idx = [i for i, p in enumerate(preds) if route(p.app_softmax, self.tau) == a]
            if not idx:
                continue
            sub = AppOutput(out.softmax[idx], out.cell_states[idx], out.final_thetas[idx])
            probs = self.activity_probs(app, x[idx], sub)
            for i, pr in zip(idx, probs):
                preds[i].activity = int(np.argmax(pr))
                preds[i].activity_softmax = pr
                preds[i].routed = True
        return preds

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        atomic_write(os.path.join(directory, "app.json"), nn.dump_model(self.app.hparams(), self.app.named_tensors()))
        for app, model in sorted(self.activity.items()):
            atomic_write(os.path.join(directory, f"activity_{app}.json"), nn.dump_model(model.hparams(), model.named_tensors()))
        meta = dict(self.meta)
        meta.update({"model": "lstm", "apps": list(APPS), "activities": {a: list(ACTIVITIES[a]) for a in APPS}, "tau": self.tau})
        atomic_write(os.path.join(directory, "meta.json"), json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory: str) -> "Ensemble":
        with open(os.path.join(directory, "meta.json")) as fh:
            meta = json.load(fh)
        with open(os.path.join(directory, "app.json")) as fh:
            app = AppClassifier.from_tensors(*nn.load_model(fh.read()))
        activity = {}
        for a in ROUTED_APPS:
            path = os.path.join(directory, f"activity_{a}.json")
            if os.path.exists(path):
                with open(path) as fh:
                    activity[a] = ActivityClassifier.from_tensors(*nn.load_model(fh.read()))
        return cls(app, activity, meta.get("tau", DEFAULT_TAU), meta)


def _class_uniform(rng: np.random.Generator, groups: List[np.ndarray], size: int) -> Tuple[np.ndarray, np.ndarray]:
    """With-replacement draw: class uniformly, then a member uniformly within it."""
    cls = rng.integers(0, len(groups), size=size)
    idx = np.array([groups[c][rng.integers(0, len(groups[c]))] for c in cls], dtype=np.int64)
    return idx, cls


@dataclass
class TrainLog:
    app: List[float] = field(default_factory=list)
    activity: Dict[str, List[float]] = field(default_factory=dict)


def train(
    ens: Ensemble,
    data: LabeledSet,
    n_batches: int = 2000,
    batch_size: int = 50,
    seed: int = 0,
    lr: float = 1e-3,
    clip: float = CLIP_NORM,
    progress=None,
) -> TrainLog:
    """Train the application model and every activity model side by side.

    Each activity model sees only streams whose true application is its own,
    and reads the application model's current outputs as fixed inputs, so no
    gradient crosses between models.
    """
    app_groups = [np.flatnonzero(data.app == k) for k in range(len(APPS))]
    for k, g in enumerate(app_groups):
        if len(g) == 0:
            raise EmptyClass(f"no training streams for application {APPS[k]}")
    act_groups: Dict[str, List[np.ndarray]] = {}
    for app in ens.activity:
        members = data.of_app(app)
        groups = [members[data.act[members] == j] for j in range(len(ACTIVITIES[app]))]
        for j, g in enumerate(groups):
            if len(g) == 0:
                raise EmptyClass(f"no training streams for {app}/{ACTIVITIES[app][j]}")
        act_groups[app] = groups

    log = TrainLog(activity={a: [] for a in ens.activity})
    app_rng = substream(seed, "train/app")
    act_rngs = {a: substream(seed, f"train/activity/{a}") for a in ens.activity}
    app_tensors = ens.app.named_tensors()
    act_tensors = {a: m.named_tensors() for a, m in ens.activity.items()}
    app_opt = nn.AdamState()
    act_opts = {a: nn.AdamState() for a in ens.activity}
    order = full_order(ens.app.block_assignment)

    apps = sorted(ens.activity)
    for step in range(n_batches):
        idx, _ = _class_uniform(app_rng, app_groups, batch_size)
        draws = [_class_uniform(act_rngs[a], act_groups[a], batch_size) for a in apps]
        # one application pass serves every activity batch; it sees the pre-update model
        if apps:
            act_idx = np.concatenate([d[0] for d in draws])
            out = app_forward(ens.app, data.pooled[act_idx])
            static = np.concatenate([out.softmax, out.cell_states[:, -1]], axis=1)
        loss, grads = app_loss_grads(ens.app, data.pooled[idx], data.app[idx])
        nn.clip_by_global_norm(grads, clip)
        nn.adam_step(app_tensors, grads, app_opt, lr=lr)
        log.app.append(loss)
        for j, app in enumerate(apps):
            rows = slice(j * batch_size, (j + 1) * batch_size)
            a_idx, y = draws[j]
            loss, grads = activity_loss_grads(ens.activity[app], data.pooled[a_idx][:, order], static[rows], y)
            nn.clip_by_global_norm(grads, clip)
            nn.adam_step(act_tensors[app], grads, act_opts[app], lr=lr)
            log.activity[app].append(loss)
        if progress is not None:
            progress(step, log)
    return log


def confusion(y_true: np.ndarray, y_pred: np.ndarray, k: int) -> np.ndarray:
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return m


def _task(y_true: np.ndarray, y_pred: np.ndarray, classes: Sequence[str]) -> dict:
    cm = confusion(y_true, y_pred, len(classes))
    n = int(cm.sum())
    return {
        "classes": list(classes),
        "n": n,
        "accuracy": float(np.trace(cm) / n) if n else None,
        "confusion": cm.tolist(),
    }


def evaluate(model, data: LabeledSet) -> dict:
    """Accuracy and confusion counts per task.

    Application accuracy covers every stream. Activity accuracy for an app is
    measured on streams whose true application is that app (the classifier the
    training path optimises); ``routed`` additionally scores the end-to-end
    path where the predicted application picks the activity model.
    """
    app_pred = np.asarray(model.predict_app(data))
    out = {"app": _task(data.app, app_pred, APPS), "activity": {}, "routed": {}}
    for app in ROUTED_APPS:
        idx = data.of_app(app)
        sub = data.subset(idx)
        pred = np.asarray(model.predict_activity(app, sub)) if len(idx) else np.zeros(0, dtype=np.int64)
        out["activity"][app] = _task(sub.act, pred, ACTIVITIES[app])
        hit = app_pred[idx] == APPS.index(app)
        out["routed"][app] = {
            "n": int(len(idx)),
            "accuracy": float(np.mean(hit & (pred == sub.act))) if len(idx) else None,
        }
    return out


def confusion_csv(task: dict) -> str:
    """Header of predicted classes, then one row per true class."""
    classes = task["classes"]
    lines = ["true\\pred," + ",".join(classes)]
    for name, row in zip(classes, task["confusion"]):
        lines.append(name + "," + ",".join(str(v) for v in row))
    return "\n".join(lines) + "\n"
