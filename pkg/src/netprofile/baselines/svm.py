"""One-vs-rest linear SVM trained by stochastic subgradient descent on the hinge loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from netprofile.rng import substream


def hinge_objective(w: np.ndarray, b: float, X: np.ndarray, t: np.ndarray, lam: float) -> float:
    """lam/2 |w|^2 + mean(max(0, 1 - t (Xw + b))) for targets t in {-1, +1}."""
    margin = 1.0 - t * (X @ w + b)
    return 0.5 * lam * float(w @ w) + float(np.mean(np.maximum(margin, 0.0)))


def hinge_subgradient(w: np.ndarray, b: float, X: np.ndarray, t: np.ndarray, lam: float) -> Tuple[np.ndarray, float]:
    """A subgradient of hinge_objective; exact gradient away from kinks."""
    active = (1.0 - t * (X @ w + b)) > 0
    coef = np.where(active, -t, 0.0) / len(t)
    return lam * w + X.T @ coef, float(coef.sum())


@dataclass
class LinearSvmModel:
    W: np.ndarray  # (K, d) in standardized units
    b: np.ndarray  # (K,)
    mean: np.ndarray
    scale: np.ndarray
    lam: float
    present: Optional[np.ndarray] = None  # classes seen in training
    meta: dict = field(default_factory=dict)

    def decision(self, X: np.ndarray) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
        out = Z @ self.W.T + self.b
        if self.present is not None:
            out[:, ~self.present] = -np.inf
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.decision(X), axis=1)

    def to_json(self) -> dict:
        return {
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "lam": self.lam,
            "present": None if self.present is None else self.present.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LinearSvmModel":
        return cls(
            np.asarray(doc["W"], dtype=np.float64),
            np.asarray(doc["b"], dtype=np.float64),
            np.asarray(doc["mean"], dtype=np.float64),
            np.asarray(doc["scale"], dtype=np.float64),
            float(doc["lam"]),
            None if doc.get("present") is None else np.asarray(doc["present"], dtype=bool),
            doc.get("meta", {}),
        )


def _fit_binary(Z: np.ndarray, t: np.ndarray, lam: float, epochs: int, batch: int, rng) -> Tuple[np.ndarray, float]:
    # Pegasos step size 1/(lam * step), iterate averaged over the second half
    n, d = Z.shape
    w = np.zeros(d)
    b = 0.0
    w_avg = np.zeros(d)
    b_avg = 0.0
    steps = epochs * max(1, -(-n // batch))
    half = steps // 2
    step = 0
    for _ in range(epochs):
        perm = rng.permutation(n)
        for s in range(0, n, batch):
            step += 1
            idx = perm[s : s + batch]
            gw, gb = hinge_subgradient(w, b, Z[idx], t[idx], lam)
            eta = 1.0 / (lam * (step + 1))
            w -= eta * gw
            b -= eta * gb
            if step > half:
                k = step - half
                w_avg += (w - w_avg) / k
                b_avg += (b - b_avg) / k
    return w_avg, b_avg


def svm_train(
    X: np.ndarray,
    y: np.ndarray,
    lam: float = 1e-3,
    epochs: int = 30,
    seed: int = 0,
    n_classes: Optional[int] = None,
    batch: int = 16,
    prefix: str = "svm",
) -> LinearSvmModel:
    """Standardize features, then fit one hinge-loss separator per class."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if lam <= 0:
        raise ValueError("lam must be positive")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    W = np.zeros((n_classes, X.shape[1]))
    b = np.zeros(n_classes)
    for k in range(n_classes):
        t = np.where(y == k, 1.0, -1.0)
        if not (y == k).any():
            continue
        W[k], b[k] = _fit_binary(Z, t, lam, epochs, batch, substream(seed, f"{prefix}/class/{k}"))
    present = np.bincount(y, minlength=n_classes)[:n_classes] > 0
    return LinearSvmModel(W, b, mean, scale, lam, present, {"kind": "linear one-vs-rest"})
