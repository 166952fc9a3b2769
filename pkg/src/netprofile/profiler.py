"""Per-user (application, activity) histories and naive Bayes trait classification.

Each labeled stream attributed to a user becomes one event. Events accumulate
into count vectors over a fixed vocabulary; a multinomial naive Bayes model per
trait turns a count vector into a posterior over that trait's labels.
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from netprofile.dataset import ACTIVITIES, APPS, event_name
from netprofile.errors import BadConfig, EmptyTraining
from netprofile.fsutil import atomic_write

OTHER = "other"
VOCAB: Tuple[str, ...] = tuple(
    [event_name(a, act) for a in APPS for act in ACTIVITIES[a]] + [a for a in APPS if not ACTIVITIES[a]] + [OTHER]
)


def event_key(app: Optional[str], activity: Optional[str]) -> str:
    """Vocabulary entry for an (app, activity) pair; unknown pairs fall into ``other``.

    A missing activity on a single-action app means that action, since no
    activity model runs for such apps.
    """
    if app in ACTIVITIES and not activity:
        acts = ACTIVITIES[app]
        if not acts:
            return app
        if len(acts) == 1:
            activity = acts[0]
    name = event_name(app or "", activity)
    return name if name in VOCAB else OTHER


@dataclass
class ProfileRecord:
    user_id: str
    counts: Dict[str, int] = field(default_factory=dict)
    total_streams: int = 0
    last_updated: Optional[float] = None

    def vector(self, vocab: Sequence[str] = VOCAB) -> np.ndarray:
        v = np.zeros(len(vocab))
        index = {e: i for i, e in enumerate(vocab)}
        for e, c in self.counts.items():
            v[index.get(e, index[OTHER])] += c
        return v

    def to_json(self) -> dict:
        return {
            "user": self.user_id,
            "counts": dict(sorted(self.counts.items())),
            "total_streams": self.total_streams,
            "last_updated": self.last_updated,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ProfileRecord":
        return cls(doc["user"], dict(doc["counts"]), int(doc["total_streams"]), doc.get("last_updated"))


def update_profile(
    db: Dict[str, ProfileRecord], user_id: str, app: Optional[str], activity: Optional[str], ts: Optional[float] = None
) -> ProfileRecord:
    """Count one event for ``user_id`` in an in-memory record map."""
    rec = db.get(user_id)
    if rec is None:
        rec = db[user_id] = ProfileRecord(user_id)
    key = event_key(app, activity)
    rec.counts[key] = rec.counts.get(key, 0) + 1
    rec.total_streams += 1
    if ts is not None:
        rec.last_updated = ts if rec.last_updated is None else max(rec.last_updated, ts)
    return rec


def replay(events: Iterable[Mapping]) -> Dict[str, ProfileRecord]:
    db: Dict[str, ProfileRecord] = {}
    for ev in events:
        update_profile(db, str(ev["user"]), ev.get("app"), ev.get("activity"), ev.get("ts"))
    return db


class ProfileDB:
    """Append-only JSONL event log with a compacted snapshot next to it.

    The snapshot records how many log lines it already covers, so loading is
    snapshot + replay of the remaining tail. One lock serializes writers.
    """

    LOG = "events.jsonl"
    SNAPSHOT = "snapshot.json"

    def __init__(self, directory: str):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)
        self._lock = threading.Lock()
        self.records: Dict[str, ProfileRecord] = {}
        self._lines = 0
        self._load()

    @property
    def log_path(self) -> str:
        return os.path.join(self.directory, self.LOG)

    @property
    def snapshot_path(self) -> str:
        return os.path.join(self.directory, self.SNAPSHOT)

    def _load(self) -> None:
        covered = 0
        if os.path.exists(self.snapshot_path):
            with open(self.snapshot_path) as fh:
                snap = json.load(fh)
            covered = snap["log_lines"]
            self.records = {r["user"]: ProfileRecord.from_json(r) for r in snap["records"]}
        if os.path.exists(self.log_path):
            with open(self.log_path) as fh:
                for i, line in enumerate(fh):
                    if not line.strip():
                        continue
                    self._lines = i + 1
                    if i >= covered:
                        ev = json.loads(line)
                        update_profile(self.records, str(ev["user"]), ev.get("app"), ev.get("activity"), ev.get("ts"))

    def record(self, user_id: str, app: Optional[str], activity: Optional[str], ts: Optional[float] = None) -> ProfileRecord:
        line = json.dumps({"user": user_id, "ts": ts, "app": app, "activity": activity}, sort_keys=True)
        with self._lock:
            with open(self.log_path, "a") as fh:
                fh.write(line + "\n")
            self._lines += 1
            return update_profile(self.records, user_id, app, activity, ts)

    def snapshot(self) -> Dict[str, ProfileRecord]:
        with self._lock:
            return {u: ProfileRecord.from_json(r.to_json()) for u, r in self.records.items()}

    def compact(self) -> None:
        with self._lock:
            doc = {"log_lines": self._lines, "records": [self.records[u].to_json() for u in sorted(self.records)]}
            atomic_write(self.snapshot_path, json.dumps(doc, sort_keys=True))


@dataclass
class TraitModel:
    trait_name: str
    labels: List[str]
    log_prior: np.ndarray  # (L,)
    log_cond: np.ndarray  # (L, V)
    vocab: Tuple[str, ...] = VOCAB
    alpha: float = 1.0

    def to_json(self) -> dict:
        return {
            "trait_name": self.trait_name,
            "labels": self.labels,
            "vocab": list(self.vocab),
            "alpha": self.alpha,
            "log_prior": self.log_prior.tolist(),
            "log_cond": self.log_cond.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TraitModel":
        return cls(
            doc["trait_name"],
            list(doc["labels"]),
            np.asarray(doc["log_prior"], dtype=np.float64),
            np.asarray(doc["log_cond"], dtype=np.float64),
            tuple(doc["vocab"]),
            float(doc["alpha"]),
        )


def nb_train(
    profiles: Sequence[Tuple[ProfileRecord, Mapping[str, str]]],
    traits: Mapping[str, Sequence[str]],
    alpha: float = 1.0,
    vocab: Sequence[str] = VOCAB,
) -> Dict[str, TraitModel]:
    """Multinomial naive Bayes per trait.

    prior(label) = share of training users with that label;
    P(event | label) = (alpha + count) / (alpha * V + total) with counts pooled
    over the label's users.
    """
    if alpha <= 0:
        raise BadConfig("alpha must be positive")
    vocab = tuple(vocab)
    V = len(vocab)
    models = {}
    for trait, labels in traits.items():
        labels = list(labels)
        if not labels:
            raise BadConfig(f"trait {trait} has no labels")
        users = np.zeros(len(labels))
        counts = np.zeros((len(labels), V))
        for rec, truth in profiles:
            lab = truth.get(trait)
            if lab is None:
                continue
            if lab not in labels:
                raise BadConfig(f"label {lab!r} not declared for trait {trait}")
            k = labels.index(lab)
            users[k] += 1
            counts[k] += rec.vector(vocab)
        missing = [lab for lab, n in zip(labels, users) if n == 0]
        if missing:
            raise EmptyTraining(f"trait {trait}: no training profiles for {missing}")
        log_prior = np.log(users) - math.log(users.sum())
        log_cond = np.log(alpha + counts) - np.log(alpha * V + counts.sum(axis=1, keepdims=True))
        models[trait] = TraitModel(trait, labels, log_prior, log_cond, vocab, alpha)
    return models


def nb_log_scores(model: TraitModel, record: ProfileRecord) -> np.ndarray:
    """Unnormalized log posterior: log prior + sum of count * log conditional."""
    return model.log_prior + model.log_cond @ record.vector(model.vocab)


def nb_predict(model: TraitModel, record: ProfileRecord) -> Dict[str, float]:
    s = nb_log_scores(model, record)
    s = s - s.max()
    p = np.exp(s)
    p /= p.sum()
    return {lab: float(v) for lab, v in zip(model.labels, p)}


def load_traits(path: str) -> Dict[str, List[str]]:
    """Trait config: ``{"trait_name": ["label", ...], ...}``."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or not all(isinstance(v, list) and v for v in doc.values()):
        raise BadConfig(f"{path}: expected an object of non-empty label lists")
    return {k: [str(x) for x in v] for k, v in doc.items()}


def load_user_labels(path: str) -> Dict[str, Dict[str, str]]:
    """Ground truth: ``{"user": {"trait": "label", ...}, ...}``."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise BadConfig(f"{path}: expected an object keyed by user")
    return {str(u): dict(v) for u, v in doc.items()}


def read_events(path: str) -> List[dict]:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                ev = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BadConfig(f"{path}:{n}: {exc}") from None
            if "user" not in ev:
                raise BadConfig(f"{path}:{n}: event without user")
            out.append(ev)
    return out
