"""CART trees with Gini splits and a bagged random forest over them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from netprofile.rng import substream


def gini(counts: np.ndarray) -> np.ndarray:
    """Gini impurity of class-count rows; empty rows give 0."""
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum(axis=-1)
    safe = np.where(n > 0, n, 1.0)
    p = counts / safe[..., None]
    return np.where(n > 0, 1.0 - np.sum(p * p, axis=-1), 0.0)


def best_split(
    X: np.ndarray, y: np.ndarray, n_classes: int, features: Optional[Sequence[int]] = None
) -> Optional[Tuple[int, float, float]]:
    """Best (feature, threshold, gini decrease) over the given features.

    Thresholds are midpoints between consecutive distinct values; samples go
    left when ``x <= threshold``. Ties keep the earlier feature in ``features``
    and then the smaller threshold. Returns None when no feature varies.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    if features is None:
        features = range(X.shape[1])
    if n < 2:
        return None
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    total = onehot.sum(axis=0)
    parent = float(gini(total))
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        valid = np.flatnonzero(xs[:-1] < xs[1:])
        if len(valid) == 0:
            continue
        left = np.cumsum(onehot[order], axis=0)[valid]
        right = total - left
        nl = (valid + 1).astype(np.float64)
        child = (nl * gini(left) + (n - nl) * gini(right)) / n
        gain = parent - child
        k = int(np.argmax(gain))
        if best is None or gain[k] > best[2]:
            thr = 0.5 * (xs[valid[k]] + xs[valid[k] + 1])
            # midpoint of adjacent floats can round up onto the right value
            if thr >= xs[valid[k] + 1]:
                thr = xs[valid[k]]
            best = (int(f), float(thr), float(gain[k]))
    return best


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    hist: np.ndarray  # (nodes, n_classes) training counts reaching each node

    @property
    def depth(self) -> int:
        def d(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(d(self.left[i]), d(self.right[i]))

        return d(0)

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            go_left = X[rows[inner], f[inner]] <= self.threshold[node[inner]]
            node[inner] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])

    def predict(self, X: np.ndarray) -> np.ndarray:
        # argmax picks the lowest class index on ties
        return np.argmax(self.hist[self.leaf_index(X)], axis=1)

    def to_json(self, i: int = 0) -> dict:
        node = {"hist": [int(v) for v in self.hist[i]]}
        if self.feature[i] >= 0:
            node.update(
                feature=int(self.feature[i]),
                threshold=float(self.threshold[i]),
                left=self.to_json(int(self.left[i])),
                right=self.to_json(int(self.right[i])),
            )
        return node

    @classmethod
    def from_json(cls, doc: dict) -> "Tree":
        feat, thr, lo, hi, hist = [], [], [], [], []

        def add(node):
            i = len(feat)
            feat.append(-1)
            thr.append(0.0)
            lo.append(-1)
            hi.append(-1)
            hist.append(node["hist"])
            if "feature" in node:
                feat[i] = node["feature"]
                thr[i] = node["threshold"]
                lo[i] = add(node["left"])
                hi[i] = add(node["right"])
            return i

        add(doc)
        return cls(
            np.asarray(feat, dtype=np.int64),
            np.asarray(thr, dtype=np.float64),
            np.asarray(lo, dtype=np.int64),
            np.asarray(hi, dtype=np.int64),
            np.asarray(hist, dtype=np.int64),
        )


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    max_depth: int,
    rng: Optional[np.random.Generator] = None,
    max_features: Optional[int] = None,
) -> Tree:
    """Grow one CART tree depth-first.

    With ``max_features`` set, each node scores that many random features and
    only looks further (in the same random order) when none of them varies.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    d = X.shape[1]
    feat: List[int] = []
    thr: List[float] = []
    lo: List[int] = []
    hi: List[int] = []
    hist: List[np.ndarray] = []

    def node(idx: np.ndarray, depth: int) -> int:
        i = len(feat)
        counts = np.bincount(y[idx], minlength=n_classes)
        feat.append(-1)
        thr.append(0.0)
        lo.append(-1)
        hi.append(-1)
        hist.append(counts)
        if depth >= max_depth or np.count_nonzero(counts) < 2:
            return i
        split = None
        if max_features is None or max_features >= d:
            split = best_split(X[idx], y[idx], n_classes)
        else:
            perm = rng.permutation(d)
            split = best_split(X[idx], y[idx], n_classes, perm[:max_features])
            k = max_features
            while split is None and k < d:
                split = best_split(X[idx], y[idx], n_classes, perm[k : k + 1])
                k += 1
        if split is None:
            return i
        f, t, _ = split
        mask = X[idx, f] <= t
        feat[i], thr[i] = f, t
        lo[i] = node(idx[mask], depth + 1)
        hi[i] = node(idx[~mask], depth + 1)
        return i

    node(np.arange(len(y)), 0)
    return Tree(
        np.asarray(feat, dtype=np.int64),
        np.asarray(thr, dtype=np.float64),
        np.asarray(lo, dtype=np.int64),
        np.asarray(hi, dtype=np.int64),
        np.asarray(hist, dtype=np.int64).reshape(len(feat), n_classes),
    )


@dataclass
class ForestModel:
    trees: List[Tree]
    n_classes: int
    n_estimators: int
    max_depth: int
    seed: int
    max_features: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def votes(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.zeros((len(X), self.n_classes), dtype=np.int64)
        rows = np.arange(len(X))
        for t in self.trees:
            np.add.at(out, (rows, t.predict(X)), 1)
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.votes(X), axis=1)

    def to_json(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "n_estimators": self.n_estimators,
            "max_depth": self.max_depth,
            "seed": self.seed,
            "max_features": self.max_features,
            "meta": self.meta,
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ForestModel":
        return cls(
            [Tree.from_json(t) for t in doc["trees"]],
            doc["n_classes"],
            doc["n_estimators"],
            doc["max_depth"],
            doc["seed"],
            doc.get("max_features"),
            doc.get("meta", {}),
        )


def forest_train(
    X: np.ndarray,
    y: np.ndarray,
    n_estimators: int = 50,
    max_depth: int = 15,
    seed: int = 0,
    n_classes: Optional[int] = None,
    prefix: str = "forest",
) -> ForestModel:
    """Bagged CART forest with ceil(sqrt(d)) candidate features per node.

    Tree ``k`` draws its bootstrap sample and feature subsets from the named
    substream ``<prefix>/tree/k`` so any tree can be rebuilt on its own. A
    single-class training set yields a constant model.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1 if len(y) else 1
    if len(y) == 0:
        raise ValueError("forest_train needs at least one sample")
    max_features = max(1, math.ceil(math.sqrt(X.shape[1])))
    model = ForestModel([], n_classes, n_estimators, max_depth, seed, max_features)
    if len(np.unique(y)) < 2:
        const = np.bincount(y, minlength=n_classes)
        stump = Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), const[None, :])
        model.trees = [stump] * n_estimators
        model.meta["degenerate"] = True
        return model
    for k in range(n_estimators):
        rng = substream(seed, f"{prefix}/tree/{k}")
        idx = rng.integers(0, len(y), size=len(y))
        model.trees.append(grow_tree(X[idx], y[idx], n_classes, max_depth, rng, max_features))
    return model
