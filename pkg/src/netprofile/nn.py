"""Peephole LSTM cell, dense output layer, cross-entropy, BPTT and Adam in numpy.

The cell here carries state only through ``c``; there is no separate hidden
vector fed back. With x_t the input and c_prev the previous cell state::

    i, f, o = sigmoid(W_g x_t + U_g c_prev + b_g)        g in {i, f, o}
    c_t     = f * c_prev + i * tanh(W_c x_t + U_c c_prev + b_c)
    theta_t = o * tanh(c_t)

All arrays are float64. Sequences are batch-first: ``(B, T, D)``; a 2-D
``(T, D)`` sequence is treated as a batch of one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from netprofile.errors import ShapeMismatch

GATES = ("i", "f", "o")
FORGET_BIAS = 1.0


def sigmoid(z):
    # tanh form never overflows and is exact at z = 0
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LstmParams:
    """Named tensors ``W_g, U_g, b_g`` for g in i, f, o, c.

    ``gate_depth > 1`` adds ``gate_depth - 1`` tanh dense layers (``A_g_k``,
    ``a_g_k``, H x H) between each sigmoid gate's linear pre-activation and its
    sigmoid.
    """

    hidden: int
    inputs: int
    tensors: Dict[str, np.ndarray]
    gate_depth: int = 1

    @classmethod
    def zeros(cls, hidden: int, inputs: int, gate_depth: int = 1) -> "LstmParams":
        t: Dict[str, np.ndarray] = {}
        for g in GATES + ("c",):
            t[f"W_{g}"] = np.zeros((hidden, inputs))
            t[f"U_{g}"] = np.zeros((hidden, hidden))
            t[f"b_{g}"] = np.zeros(hidden)
        for g in GATES:
            for k in range(1, gate_depth):
                t[f"A_{g}_{k}"] = np.zeros((hidden, hidden))
                t[f"a_{g}_{k}"] = np.zeros(hidden)
        return cls(hidden, inputs, t, gate_depth)

    @classmethod
    def init(cls, hidden: int, inputs: int, rng: np.random.Generator, gate_depth: int = 1) -> "LstmParams":
        """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget bias +1, other biases 0."""
        p = cls.zeros(hidden, inputs, gate_depth)
        bound = 1.0 / math.sqrt(hidden)
        for name in sorted(p.tensors):
            if name[0] in "WUA":
                p.tensors[name] = rng.uniform(-bound, bound, size=p.tensors[name].shape)
        p.tensors["b_f"][:] = FORGET_BIAS
        return p

    def copy(self) -> "LstmParams":
        return LstmParams(self.hidden, self.inputs, {k: v.copy() for k, v in self.tensors.items()}, self.gate_depth)

    def check(self) -> None:
        H, D = self.hidden, self.inputs
        for g in GATES + ("c",):
            if self.tensors[f"W_{g}"].shape != (H, D) or self.tensors[f"U_{g}"].shape != (H, H):
                raise ShapeMismatch(f"gate {g}: expected W {(H, D)}, U {(H, H)}")
            if self.tensors[f"b_{g}"].shape != (H,):
                raise ShapeMismatch(f"gate {g}: expected b {(H,)}")

    def fused(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (4H x D, 4H x H, 4H) weights in gate order i, f, o, c."""
        t = self.tensors
        order = GATES + ("c",)
        return (
            np.concatenate([t[f"W_{g}"] for g in order]),
            np.concatenate([t[f"U_{g}"] for g in order]),
            np.concatenate([t[f"b_{g}"] for g in order]),
        )


@dataclass
class DenseParams:
    W: np.ndarray
    b: np.ndarray

    @classmethod
    def zeros(cls, classes: int, inputs: int) -> "DenseParams":
        return cls(np.zeros((classes, inputs)), np.zeros(classes))

    @classmethod
    def init(cls, classes: int, inputs: int, rng: np.random.Generator) -> "DenseParams":
        bound = 1.0 / math.sqrt(inputs)
        return cls(rng.uniform(-bound, bound, size=(classes, inputs)), np.zeros(classes))

    @property
    def tensors(self) -> Dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def __call__(self, h: np.ndarray) -> np.ndarray:
        return h @ self.W.T + self.b


@dataclass
class LstmCache:
    """Forward intermediates, stored gate-major so each gate block is contiguous."""

    s: np.ndarray  # (T+1, H+Dx, B); s[t] stacks c[t] (rows :H) over x_t (rows H:)
    gates: np.ndarray  # (T, 4H, B) activated i, f, o, candidate
    tanh_c: np.ndarray  # (T, H, B)
    hidden: int
    deep: Dict[Tuple[str, int], np.ndarray] = field(default_factory=dict)  # (T, H, B) tanh inputs of extra gate layers
    static: Optional[np.ndarray] = None  # (B, Ds) per-sequence input shared by all steps

    @property
    def c(self) -> np.ndarray:
        """(T+1, H, B) cell states, c[0] being the initial state."""
        return self.s[:, : self.hidden]


def _as_batch(x: np.ndarray, ndim: int) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim - 1:
        return x[None], True
    return x, False


def _deep_gates(p: LstmParams, a: np.ndarray, t: int, cache: LstmCache) -> None:
    """Run the extra gate layers on pre-activations ``a`` (4H, B) and activate in place."""
    H = p.hidden
    for j, g in enumerate(GATES):
        h = a[j * H : (j + 1) * H]
        for k in range(1, p.gate_depth):
            u = np.tanh(h)
            cache.deep[(g, k)][t] = u
            h = p.tensors[f"A_{g}_{k}"] @ u + p.tensors[f"a_{g}_{k}"][:, None]
        a[j * H : (j + 1) * H] = sigmoid(h)
    np.tanh(a[3 * H :], out=a[3 * H :])


def _stacked(p: LstmParams, dx: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """([U | W_x], W_static, b) in gate order i, f, o, c."""
    Wf, Uf, bf = p.fused()
    return np.ascontiguousarray(np.concatenate([Uf, Wf[:, :dx]], axis=1)), Wf[:, dx:], bf


def lstm_forward_cached(
    p: LstmParams, x: np.ndarray, c0: np.ndarray, static: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray, LstmCache]:
    """Batched forward pass; returns (thetas (B, T, H), c_final (B, H), cache).

    ``static`` (B, Ds) is appended to every step's input without being
    materialized T times; it occupies the last Ds input columns of W.
    """
    ds = 0 if static is None else static.shape[1]
    if x.ndim != 3 or x.shape[2] + ds != p.inputs:
        raise ShapeMismatch(f"input {x.shape} (+{ds} static) does not match D={p.inputs}")
    B, T, Dx = x.shape
    H = p.hidden
    if c0.shape != (B, H):
        raise ShapeMismatch(f"c0 {c0.shape} does not match (B={B}, H={H})")
    M, Ws, bf = _stacked(p, Dx)
    bias = np.repeat(bf[:, None], B, axis=1) if static is None else (static @ Ws.T + bf).T
    plain = p.gate_depth == 1
    if plain:
        # sigmoid(z) = 0.5 + 0.5 tanh(z / 2): halve the gate rows so one tanh covers all four blocks
        M = M.copy()
        M[: 3 * H] *= 0.5
        bias = bias.copy()
        bias[: 3 * H] *= 0.5
    buf = np.empty((T + 1, H + Dx, B))
    buf[0, :H] = c0.T
    buf[:T, H:] = x.transpose(1, 2, 0)
    buf[T, H:] = 0.0
    gates = np.empty((T, 4 * H, B))
    cache = LstmCache(buf, gates, np.empty((T, H, B)), H, static=static)
    for g in GATES:
        for k in range(1, p.gate_depth):
            cache.deep[(g, k)] = np.empty((T, H, B))
    tmp = np.empty((H, B))
    for t in range(T):
        a = gates[t]
        np.dot(M, buf[t], out=a)
        a += bias
        if plain:
            np.tanh(a, out=a)
            ifo = a[: 3 * H]
            ifo *= 0.5
            ifo += 0.5
        else:
            _deep_gates(p, a, t, cache)
        c_next = buf[t + 1, :H]
        np.multiply(a[H : 2 * H], buf[t, :H], out=c_next)
        np.multiply(a[:H], a[3 * H :], out=tmp)
        c_next += tmp
    np.tanh(buf[1:, :H], out=cache.tanh_c)
    thetas = (gates[:, 2 * H : 3 * H] * cache.tanh_c).transpose(2, 0, 1)
    return thetas, buf[T, :H].T.copy(), cache


def lstm_backward(
    p: LstmParams,
    cache: LstmCache,
    dtheta: Optional[np.ndarray] = None,
    dtheta_last: Optional[np.ndarray] = None,
    dc_final: Optional[np.ndarray] = None,
    need_dx: bool = False,
) -> Tuple[Dict[str, np.ndarray], np.ndarray, Optional[np.ndarray]]:
    """Reverse-mode gradients through the whole sequence.

    ``dtheta`` is (B, T, H) for every step, ``dtheta_last`` (B, H) for the final
    step only; ``dc_final`` (B, H) is the gradient arriving at the final cell
    state. Returns (named parameter gradients, gradient at c0 (B, H), gradient
    at x (B, T, Dx) or None).
    """
    buf, gates, tanh_c = cache.s, cache.gates, cache.tanh_c
    T, HD, B = buf.shape[0] - 1, buf.shape[1], buf.shape[2]
    H = p.hidden
    Dx = HD - H
    M, _, _ = _stacked(p, Dx)
    MT = np.ascontiguousarray(M.T)  # (H+Dx, 4H)
    grads = {name: np.zeros_like(v) for name, v in p.tensors.items()}
    plain = p.gate_depth == 1
    dZ = np.zeros((T, 4 * H, B))
    dS = np.empty((T, HD, B)) if need_dx else None
    o = gates[:, 2 * H : 3 * H]
    # gradient into each step's cell state coming from its own output theta
    d_c_in = None
    if dtheta is not None:
        dth = np.asarray(dtheta).transpose(1, 2, 0)
        dZ[:, 2 * H : 3 * H] = dth * tanh_c
        d_c_in = dth * o * (1.0 - tanh_c * tanh_c)
    dc = np.zeros((H, B)) if dc_final is None else np.array(np.asarray(dc_final).T, dtype=np.float64)
    if dtheta_last is not None and T:
        dl = np.asarray(dtheta_last).T
        dZ[T - 1, 2 * H : 3 * H] += dl * tanh_c[T - 1]
        dc += dl * o[T - 1] * (1.0 - tanh_c[T - 1] ** 2)
    dZ[:, 2 * H : 3 * H] *= o * (1.0 - o)
    tmp = np.empty((HD, B))
    w1 = np.empty((H, B))
    w2 = np.empty((H, B))
    for t in range(T - 1, -1, -1):
        if d_c_in is not None:
            dc += d_c_in[t]
        dz = dZ[t]
        g = gates[t]
        i_t, f_t, c_t = g[:H], g[H : 2 * H], g[3 * H :]
        # input gate: dc * cand * i(1-i)
        np.subtract(1.0, i_t, out=w1)
        w1 *= i_t
        w1 *= c_t
        np.multiply(dc, w1, out=dz[:H])
        # forget gate: dc * c_prev * f(1-f)
        np.subtract(1.0, f_t, out=w1)
        w1 *= f_t
        w1 *= buf[t, :H]
        np.multiply(dc, w1, out=dz[H : 2 * H])
        # candidate: dc * i * (1 - cand^2)
        np.multiply(c_t, c_t, out=w2)
        np.subtract(1.0, w2, out=w2)
        w2 *= i_t
        np.multiply(dc, w2, out=dz[3 * H :])
        if not plain:
            for j, gname in enumerate(GATES):
                dh = dz[j * H : (j + 1) * H].copy()
                for k in range(p.gate_depth - 1, 0, -1):
                    u = cache.deep[(gname, k)][t]
                    grads[f"A_{gname}_{k}"] += dh @ u.T
                    grads[f"a_{gname}_{k}"] += dh.sum(axis=1)
                    dh = (p.tensors[f"A_{gname}_{k}"].T @ dh) * (1.0 - u * u)
                dz[j * H : (j + 1) * H] = dh
        out = dS[t] if need_dx else tmp
        np.dot(MT, dz, out=out)
        dc *= f_t
        dc += out[:H]
    flat = np.ascontiguousarray(dZ.transpose(1, 0, 2)).reshape(4 * H, T * B)
    dM = flat @ np.ascontiguousarray(buf[:T].transpose(0, 2, 1)).reshape(T * B, HD)
    dW = dM[:, H:]
    if cache.static is not None:
        dW = np.concatenate([dW, dZ.sum(axis=0) @ cache.static], axis=1)
    dU = dM[:, :H]
    db = flat.sum(axis=1)
    for j, gname in enumerate(GATES + ("c",)):
        sl = slice(j * H, (j + 1) * H)
        grads[f"W_{gname}"] += dW[sl]
        grads[f"U_{gname}"] += dU[sl]
        grads[f"b_{gname}"] += db[sl]
    dx = dS[:, H:].transpose(2, 0, 1) if need_dx else None
    return grads, dc.T.copy(), dx


def lstm_step(p: LstmParams, x_t: np.ndarray, c_prev: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """One cell update; accepts a single vector or a (B, D) batch. Returns (c_t, theta)."""
    x, single = _as_batch(x_t, 2)
    c, _ = _as_batch(c_prev, 2)
    p.check()
    thetas, c_t, _ = lstm_forward_cached(p, x[:, None, :], c)
    theta = thetas[:, 0]
    if single:
        return c_t[0], theta[0]
    return c_t, theta


def lstm_forward(p: LstmParams, sequence: np.ndarray, c0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Fold lstm_step over a (T, D) or (B, T, D) sequence. Returns (thetas, c_final)."""
    x = np.asarray(sequence, dtype=np.float64)
    c = np.asarray(c0, dtype=np.float64)
    if x.ndim == 2 or (x.ndim == 1 and x.size == 0):
        x = x.reshape(-1, p.inputs)
        thetas, c_t, _ = lstm_forward_cached(p, x[None], c[None])
        return thetas[0], c_t[0]
    thetas, c_t, _ = lstm_forward_cached(p, x, c)
    return thetas, c_t


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits, axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_xent(logits: np.ndarray, label) -> Tuple[float, np.ndarray]:
    """Cross-entropy and its gradient wrt the logits.

    For a (B, K) batch with B labels the loss is the batch mean and the
    gradient is scaled accordingly.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        lp = log_softmax(logits)
        d = np.exp(lp)
        d[label] -= 1.0
        return float(-lp[label]), d
    labels = np.asarray(label)
    B = logits.shape[0]
    lp = log_softmax(logits)
    loss = float(-lp[np.arange(B), labels].mean())
    d = np.exp(lp)
    d[np.arange(B), labels] -= 1.0
    return loss, d / B


@dataclass
class SequenceClassifier:
    """One LSTM cell over a sequence plus a dense head on the final theta."""

    cell: LstmParams
    head: DenseParams

    def named_tensors(self) -> Dict[str, np.ndarray]:
        out = {f"cell.{k}": v for k, v in self.cell.tensors.items()}
        out.update({f"head.{k}": v for k, v in self.head.tensors.items()})
        return out

    def logits(self, sequence: np.ndarray) -> np.ndarray:
        x, single = _as_batch(sequence, 3)
        B = x.shape[0]
        thetas, c_final, _ = lstm_forward_cached(self.cell, x, np.zeros((B, self.cell.hidden)))
        last = thetas[:, -1] if x.shape[1] else np.zeros((B, self.cell.hidden))
        out = self.head(last)
        return out[0] if single else out


def bptt_grads(
    model: SequenceClassifier, sequence: np.ndarray, label, loss_scale: float = 1.0
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss and exact gradients for every tensor of ``model`` (keys as in named_tensors)."""
    x, single = _as_batch(sequence, 3)
    labels = np.atleast_1d(label) if not single else label
    B, T, _ = x.shape
    H = model.cell.hidden
    thetas, _, cache = lstm_forward_cached(model.cell, x, np.zeros((B, H)))
    last = thetas[:, -1] if T else np.zeros((B, H))
    logits = model.head(last)
    if single:
        loss, dlog = softmax_xent(logits[0], labels)
        dlog = dlog[None]
    else:
        loss, dlog = softmax_xent(logits, labels)
    loss *= loss_scale
    dlog = dlog * loss_scale
    grads = {"head.W": dlog.T @ last, "head.b": dlog.sum(axis=0)}
    if T:
        cell_grads, _, _ = lstm_backward(model.cell, cache, dtheta_last=dlog @ model.head.W)
    else:
        cell_grads = {k: np.zeros_like(v) for k, v in model.cell.tensors.items()}
    grads.update({f"cell.{k}": v for k, v in cell_grads.items()})
    return loss, grads


def numeric_grads(loss_fn: Callable[[], float], tensors: Dict[str, np.ndarray], eps: float = 1e-5) -> Dict[str, np.ndarray]:
    """Central differences of ``loss_fn`` wrt every entry of every tensor (perturbed in place)."""
    out = {}
    for name, arr in tensors.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_fn()
            flat[j] = orig - eps
            down = loss_fn()
            flat[j] = orig
            gflat[j] = (up - down) / (2 * eps)
        out[name] = g
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max over entries of |a - n| / max(|a|, |n|, floor)."""
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(
    model: SequenceClassifier,
    sequence: np.ndarray,
    label: int,
    eps: float = 1e-5,
    grad_fn: Callable = bptt_grads,
) -> Dict[str, float]:
    """Per-tensor max relative error between ``grad_fn`` and central differences."""
    _, analytic = grad_fn(model, sequence, label)
    tensors = model.named_tensors()

    def loss() -> float:
        return softmax_xent(model.logits(sequence), label)[0]

    numeric = numeric_grads(loss, tensors, eps)
    return {name: relative_error(analytic[name], numeric[name]) for name in tensors}


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for _, g in sorted(grads.items())))


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    moments: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: Optional[int] = None,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update, applied in place to ``params`` and ``moments``."""
    t = moments.t + 1 if t is None else t
    if t < 1:
        raise ValueError("Adam step count starts at 1")
    moments.t = t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in sorted(params):
        g = grads[name]
        m = moments.m.setdefault(name, np.zeros_like(g))
        v = moments.v.setdefault(name, np.zeros_like(g))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, moments


def tensor_to_json(a: np.ndarray) -> dict:
    # json writes floats with repr, the shortest string that round-trips float64
    return {"shape": list(a.shape), "data": [float(v) for v in np.asarray(a, dtype=np.float64).reshape(-1)]}


def tensor_from_json(obj: dict) -> np.ndarray:
    return np.asarray(obj["data"], dtype=np.float64).reshape(obj["shape"])


def dump_model(hparams: dict, tensors: Dict[str, np.ndarray]) -> str:
    doc = {"hyperparameters": hparams, "tensors": {k: tensor_to_json(tensors[k]) for k in sorted(tensors)}}
    return json.dumps(doc, sort_keys=False, separators=(",", ":"))


def load_model(text: str) -> Tuple[dict, Dict[str, np.ndarray]]:
    doc = json.loads(text)
    return doc["hyperparameters"], {k: tensor_from_json(v) for k, v in doc["tensors"].items()}


def lstm_from_tensors(prefix: str, tensors: Dict[str, np.ndarray], gate_depth: int = 1) -> LstmParams:
    own = {k[len(prefix) :]: v for k, v in tensors.items() if k.startswith(prefix)}
    H, D = own["W_i"].shape
    return LstmParams(H, D, own, gate_depth)


def split_named(prefix: str, tensors: Dict[str, np.ndarray]) -> List[str]:
    return sorted(k for k in tensors if k.startswith(prefix))
