"""Application and activity baselines over flow-statistics features."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, Union

import numpy as np

from netprofile.baselines.forest import ForestModel, forest_train
from netprofile.baselines.svm import LinearSvmModel, svm_train
from netprofile.dataset import ACTIVITIES, APPS, ROUTED_APPS, LabeledSet
from netprofile.errors import EmptyClass
from netprofile.fsutil import atomic_write

# (n_estimators, max_depth) for the application forest and each activity forest
APP_FOREST = (50, 15)
ACTIVITY_FOREST = (20, 10)

Model = Union[ForestModel, LinearSvmModel]


@dataclass
class StatsBaseline:
    kind: str  # "forest" or "svm"
    app: Model
    activity: Dict[str, Model]
    meta: dict = field(default_factory=dict)

    def predict_app(self, ds: LabeledSet) -> np.ndarray:
        if len(ds) == 0:
            return np.zeros(0, dtype=np.int64)
        return self.app.predict(ds.stats)

    def predict_activity(self, app: str, ds: LabeledSet) -> np.ndarray:
        if len(ds) == 0:
            return np.zeros(0, dtype=np.int64)
        return self.activity[app].predict(ds.stats)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "meta": self.meta,
            "app": self.app.to_json(),
            "activity": {a: m.to_json() for a, m in self.activity.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "StatsBaseline":
        load = ForestModel.from_json if doc["kind"] == "forest" else LinearSvmModel.from_json
        return cls(doc["kind"], load(doc["app"]), {a: load(m) for a, m in doc["activity"].items()}, doc.get("meta", {}))

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        atomic_write(os.path.join(directory, f"{self.kind}.json"), json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, directory: str, kind: str) -> "StatsBaseline":
        with open(os.path.join(directory, f"{kind}.json")) as fh:
            return cls.from_json(json.load(fh))


def train_baseline(
    kind: str,
    data: LabeledSet,
    seed: int = 0,
    app_forest=APP_FOREST,
    activity_forest=ACTIVITY_FOREST,
    svm_lambda: float = 1e-3,
    svm_epochs: int = 30,
) -> StatsBaseline:
    """Fit the application model on every stream and one activity model per routed app."""
    for a in APPS:
        if not (data.app == APPS.index(a)).any():
            raise EmptyClass(f"no training streams for application {a}")

    def fit(X, y, k, name, shape):
        if kind == "forest":
            return forest_train(X, y, shape[0], shape[1], seed, n_classes=k, prefix=f"forest/{name}")
        if kind == "svm":
            return svm_train(X, y, svm_lambda, svm_epochs, seed, n_classes=k, prefix=f"svm/{name}")
        raise ValueError(f"unknown baseline {kind!r}")

    app_model = fit(data.stats, data.app, len(APPS), "app", app_forest)
    act_models = {}
    for app in ROUTED_APPS:
        sub = data.subset(data.of_app(app))
        for j, act in enumerate(ACTIVITIES[app]):
            if not (sub.act == j).any():
                raise EmptyClass(f"no training streams for {app}/{act}")
        act_models[app] = fit(sub.stats, sub.act, len(ACTIVITIES[app]), f"activity/{app}", activity_forest)
    meta = {"features": "flow statistics (15)"}
    if kind == "forest":
        meta.update(app_forest=list(app_forest), activity_forest=list(activity_forest))
    else:
        meta.update(lam=svm_lambda, epochs=svm_epochs, note="linear stand-in for a kernel SVM")
    return StatsBaseline(kind, app_model, act_models, meta)
