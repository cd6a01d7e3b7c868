"""Gradient boosting of shallow regression trees.

Least-squares boosting for regression; for classification the trees fit the
log-loss gradient and leaves take one Newton step. Candidate split points are
midpoints between consecutive distinct training values (at most ``max_bins``
per feature), and a sample goes left when ``x <= threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lasso import null_intercept, sigmoid

MAX_BINS = 255


@dataclass
class Tree:
    """Flat binary tree. ``feature[i] == -1`` marks leaf ``i``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=int)
        for _ in range(self.depth + 1):
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            idx = np.nonzero(inner)[0]
            go_left = X[idx, f[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
        return self.value[node]

    @property
    def depth(self) -> int:
        def d(i):
            return 0 if self.feature[i] < 0 else 1 + max(d(self.left[i]), d(self.right[i]))
        return d(0)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(*(np.array(d[k], dtype=float if k in ("threshold", "value") else int)
                     for k in ("feature", "threshold", "left", "right", "value")))


@dataclass
class GBModel:
    trees: list
    learning_rate: float
    init: float
    task: str
    max_depth: int = 3
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_round: int = 0

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        z = np.full(len(X), self.init)
        for t in self.trees:
            z += self.learning_rate * t.predict(X)
        return z

    def to_dict(self) -> dict:
        return {
            "trees": [t.to_dict() for t in self.trees],
            "learning_rate": self.learning_rate,
            "init": self.init,
            "task": self.task,
            "max_depth": self.max_depth,
            "best_round": self.best_round,
        }

    @classmethod
    def from_dict(cls, d) -> "GBModel":
        return cls([Tree.from_dict(t) for t in d["trees"]], float(d["learning_rate"]), float(d["init"]),
                   d["task"], int(d["max_depth"]), best_round=int(d["best_round"]))


def _cuts(col: np.ndarray, max_bins: int) -> np.ndarray:
    u = np.unique(col)
    mids = (u[:-1] + u[1:]) / 2
    if len(mids) > max_bins - 1:
        q = np.linspace(0, len(mids) - 1, max_bins - 1).round().astype(int)
        mids = mids[np.unique(q)]
    return mids


class _Binned:
    def __init__(self, X, max_bins):
        n, p = X.shape
        self.cuts = [_cuts(X[:, j], max_bins) for j in range(p)]
        self.n_bins = max((len(c) + 1 for c in self.cuts), default=1)
        codes = np.empty((n, p), dtype=np.int64)
        for j, c in enumerate(self.cuts):
            codes[:, j] = np.searchsorted(c, X[:, j], side="left")
        self.codes = codes
        self.flat = codes + np.arange(p) * self.n_bins
        self.p = p


def _best_split(B: _Binned, idx, g, h, min_leaf):
    """Best (gain, feature, cut index) for the samples ``idx``."""
    nb, p = B.n_bins, B.p
    flat = B.flat[idx].ravel()
    G = np.bincount(flat, weights=np.repeat(g[idx], p), minlength=nb * p).reshape(p, nb)
    H = np.bincount(flat, weights=np.repeat(h[idx], p), minlength=nb * p).reshape(p, nb)
    N = np.bincount(flat, minlength=nb * p).reshape(p, nb)
    GL, HL, NL = np.cumsum(G, 1)[:, :-1], np.cumsum(H, 1)[:, :-1], np.cumsum(N, 1)[:, :-1]
    Gt, Ht, Nt = G.sum(1, keepdims=True), H.sum(1, keepdims=True), N.sum(1, keepdims=True)
    GR, HR, NR = Gt - GL, Ht - HL, Nt - NL
    ok = (NL >= min_leaf) & (NR >= min_leaf) & (HL > 0) & (HR > 0)
    for j, c in enumerate(B.cuts):
        ok[j, len(c):] = False
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(ok, GL**2 / HL + GR**2 / HR - Gt**2 / Ht, -np.inf)
    if not np.isfinite(gain).any():
        return None
    j, k = np.unravel_index(np.argmax(gain), gain.shape)
    if gain[j, k] <= 1e-12 * max(1.0, float(Gt[j, 0] ** 2 / Ht[j, 0])):
        return None
    return float(gain[j, k]), int(j), int(k)


def _grow(B: _Binned, g, h, max_depth, min_leaf, lam=0.0) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0)):
            lst.append(v)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(g)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        # leaf value: Newton step -G / H (least squares: -mean gradient)
        value[node] = float(-g[idx].sum() / (h[idx].sum() + lam))
        if depth >= max_depth or len(idx) < 2 * min_leaf:
            continue
        split = _best_split(B, idx, g, h, min_leaf)
        if split is None:
            continue
        _, j, k = split
        go_left = B.codes[idx, j] <= k
        feature[node], threshold[node] = j, float(B.cuts[j][k])
        left[node], right[node] = new_node(), new_node()
        stack.append((right[node], idx[~go_left], depth + 1))
        stack.append((left[node], idx[go_left], depth + 1))
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(value))


def _grad_hess(z, y, task):
    if task == "reg":
        return z - y, np.ones_like(z)
    p = sigmoid(z)
    return p - y, np.maximum(p * (1 - p), 1e-12)


def gb_loss(z, y, task) -> float:
    if task == "reg":
        return float(np.mean((z - y) ** 2))
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def fit_gb(
    X_train,
    y_train,
    X_val=None,
    y_val=None,
    task="reg",
    learning_rate=0.1,
    n_rounds=300,
    max_depth=3,
    patience=20,
    min_samples_leaf=1,
    max_bins=MAX_BINS,
) -> GBModel:
    """Boost depth-limited trees; keep the round count with lowest validation loss.

    Without validation data every round is kept.
    """
    X = np.asarray(X_train, dtype=float)
    y = np.asarray(y_train, dtype=float)
    if task not in ("reg", "clf"):
        raise ValueError(f"task must be 'reg' or 'clf', got {task!r}")
    init = null_intercept(y, task)
    model = GBModel([], learning_rate, init, task, max_depth)
    z = np.full(len(y), init)
    model.train_loss.append(gb_loss(z, y, task))
    has_val = X_val is not None
    if has_val:
        Xv = np.asarray(X_val, dtype=float)
        yv = np.asarray(y_val, dtype=float)
        zv = np.full(len(yv), init)
        model.val_loss.append(gb_loss(zv, yv, task))
    if n_rounds == 0:
        return model
    B = _Binned(X, max_bins)
    best = 0
    for r in range(1, n_rounds + 1):
        g, h = _grad_hess(z, y, task)
        tree = _grow(B, g, h, max_depth, min_samples_leaf)
        model.trees.append(tree)
        z = z + learning_rate * tree.predict(X)
        model.train_loss.append(gb_loss(z, y, task))
        if has_val:
            zv = zv + learning_rate * tree.predict(Xv)
            model.val_loss.append(gb_loss(zv, yv, task))
            if model.val_loss[-1] < model.val_loss[best]:
                best = r
            elif r - best >= patience:
                break
        else:
            best = r
    model.best_round = best
    model.trees = model.trees[:best]
    return model
