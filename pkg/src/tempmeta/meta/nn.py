"""One-hidden-layer ReLU network trained by mini-batch momentum SGD."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lasso import null_intercept, sigmoid

HIDDEN = 50


class DivergenceError(RuntimeError):
    pass


@dataclass
class ShallowNet:
    W1: np.ndarray  # (p, hidden)
    b1: np.ndarray
    w2: np.ndarray  # (hidden,)
    b2: float
    task: str
    l2: float = 1e-3
    epochs: int = 0
    lr: float = 1e-3
    val_loss: list = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        H = np.maximum(np.asarray(X, dtype=float) @ self.W1 + self.b1, 0.0)
        return H @ self.w2 + self.b2

    def params(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "w2": self.w2, "b2": np.array(self.b2)}

    def to_dict(self) -> dict:
        return {
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": float(self.b2),
            "task": self.task,
            "l2": self.l2,
            "epochs": self.epochs,
            "lr": self.lr,
        }

    @classmethod
    def from_dict(cls, d) -> "ShallowNet":
        return cls(np.array(d["W1"], dtype=float).reshape(-1, len(d["b1"])), np.array(d["b1"], dtype=float),
                   np.array(d["w2"], dtype=float), float(d["b2"]), d["task"], float(d["l2"]),
                   int(d["epochs"]), float(d["lr"]))


def data_loss(z, y, task) -> float:
    if task == "reg":
        return float(np.mean((z - y) ** 2))
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def loss_and_grads(params: dict, X, y, task: str, l2: float = 1e-3):
    """Penalised batch loss and its gradient with respect to every parameter.

    The penalty is ``l2 * (||W1||^2 + ||w2||^2)``; biases are not penalised.
    """
    W1, b1, w2, b2 = params["W1"], params["b1"], params["w2"], float(params["b2"])
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    A = X @ W1 + b1
    H = np.maximum(A, 0.0)
    z = H @ w2 + b2
    loss = data_loss(z, y, task) + l2 * (np.sum(W1 * W1) + np.sum(w2 * w2))
    dz = (2.0 * (z - y) if task == "reg" else sigmoid(z) - y) / n
    gw2 = H.T @ dz + 2 * l2 * w2
    gb2 = dz.sum()
    dA = np.outer(dz, w2) * (A > 0)
    gW1 = X.T @ dA + 2 * l2 * W1
    gb1 = dA.sum(axis=0)
    return float(loss), {"W1": gW1, "b1": gb1, "w2": gw2, "b2": np.array(gb2)}


def init_params(p: int, y, task: str, rng, hidden: int = HIDDEN) -> dict:
    return {
        "W1": rng.normal(0.0, np.sqrt(2.0 / max(p, 1)), size=(p, hidden)),
        "b1": np.zeros(hidden),
        "w2": rng.normal(0.0, np.sqrt(1.0 / hidden), size=hidden),
        "b2": np.array(null_intercept(y, task)),
    }


def _train(params, X, y, Xv, yv, task, lr, l2, momentum, batch, max_epochs, patience, rng):
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    n = len(y)

    def vloss(pr):
        H = np.maximum(Xv @ pr["W1"] + pr["b1"], 0.0)
        return data_loss(H @ pr["w2"] + float(pr["b2"]), yv, task)

    best = {k: v.copy() for k, v in params.items()}
    best_loss, best_epoch = vloss(params), 0
    trace = [best_loss]
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(n)
        for s in range(0, n, batch):
            idx = order[s : s + batch]
            loss, grads = loss_and_grads(params, X[idx], y[idx], task, l2)
            if not np.isfinite(loss):
                return None
            for k in params:
                vel[k] = momentum * vel[k] - lr * grads[k]
                params[k] = params[k] + vel[k]
        cur = vloss(params)
        if not np.isfinite(cur):
            return None
        trace.append(cur)
        if cur < best_loss:
            best_loss, best_epoch = cur, epoch
            best = {k: v.copy() for k, v in params.items()}
        elif epoch - best_epoch >= patience:
            break
    return best, best_epoch, trace


def fit_nn(
    X_train,
    y_train,
    X_val,
    y_val,
    task="reg",
    seed=0,
    hidden=HIDDEN,
    lr=1e-3,
    l2=1e-3,
    momentum=0.9,
    batch=64,
    max_epochs=500,
    patience=25,
    max_halvings=10,
) -> ShallowNet:
    """Train with early stopping on validation loss; the best epoch is returned.

    A non-finite loss restarts training from the same initialisation with
    half the step size.
    """
    if task not in ("reg", "clf"):
        raise ValueError(f"task must be 'reg' or 'clf', got {task!r}")
    X = np.asarray(X_train, dtype=float)
    y = np.asarray(y_train, dtype=float)
    Xv = np.asarray(X_val, dtype=float)
    yv = np.asarray(y_val, dtype=float)
    rng = np.random.default_rng(seed)
    init = init_params(X.shape[1], y, task, rng, hidden)
    shuffle_state = rng.bit_generator.state
    for _ in range(max_halvings + 1):
        rng.bit_generator.state = shuffle_state
        with np.errstate(over="ignore", invalid="ignore"):
            out = _train({k: v.copy() for k, v in init.items()}, X, y, Xv, yv, task, lr, l2, momentum, batch,
                         max_epochs, patience, rng)
        if out is not None:
            p, epoch, trace = out
            return ShallowNet(p["W1"], p["b1"], p["w2"], float(p["b2"]), task, l2, epoch, lr, trace)
        lr /= 2
    raise DivergenceError(f"training diverged after {max_halvings} step halvings")
