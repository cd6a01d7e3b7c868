"""L1-penalised linear and logistic regression by accelerated proximal gradient.

The objective is ``loss(w, b) + lam * ||w||_1`` with the bias unpenalised,
where ``loss`` is half the mean squared error for regression and the mean
log-loss for classification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TASKS = ("reg", "clf")
LAMBDA_GRID = np.logspace(-5, 1, 20)


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    lam: float
    task: str
    converged: bool = True
    n_iter: int = 0
    kkt: float = 0.0

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "lam": self.lam,
            "task": self.task,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "kkt": self.kkt,
        }

    @classmethod
    def from_dict(cls, d) -> "LinearModel":
        return cls(np.array(d["weights"], dtype=float), float(d["bias"]), float(d["lam"]), d["task"],
                   bool(d["converged"]), int(d["n_iter"]), float(d["kkt"]))


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_task(task):
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")


def _check_inputs(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(y) != len(X):
        raise ValueError(f"X must be 2-D with one row per target; got {X.shape} and {y.shape}")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("features and targets must be finite")
    return X, y


def _loss(z, y, task):
    if task == "reg":
        return 0.5 * np.mean((z - y) ** 2)
    # log(1 + e^z) - y z, stable for large |z|
    return np.mean(np.logaddexp(0.0, z) - y * z)


def _residual(z, y, task):
    return (z - y) if task == "reg" else (sigmoid(z) - y)


def null_intercept(y, task) -> float:
    m = float(np.mean(y))
    if task == "reg":
        return m
    m = min(max(m, 1e-12), 1 - 1e-12)
    return float(np.log(m / (1 - m)))


def lambda_max(X, y, task="reg") -> float:
    """Smallest penalty for which the all-zero weight vector is optimal."""
    X, y = _check_inputs(X, y)
    _check_task(task)
    b = null_intercept(y, task)
    r = _residual(np.full(len(y), b), y, task)
    return float(np.max(np.abs(X.T @ r) / len(y), initial=0.0))


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def kkt_residual(X, y, w, b, lam, task) -> float:
    """Largest violation of the subgradient optimality conditions."""
    r = _residual(X @ w + b, y, task)
    g = X.T @ r / len(y)
    viol = np.where(w != 0, np.abs(g + lam * np.sign(w)), np.maximum(np.abs(g) - lam, 0.0))
    return float(max(np.max(viol, initial=0.0), abs(np.mean(r))))


def solve_lasso(X, y, lam, task="reg", w0=None, b0=None, tol=1e-8, kkt_tol=1e-9, max_iter=50000) -> LinearModel:
    """Minimise the penalised objective for one ``lam``.

    FISTA with backtracking step sizes and gradient-based momentum
    restarts. Iteration stops once the relative objective change drops
    below ``tol`` and the KKT residual below ``kkt_tol``.
    """
    X, y = _check_inputs(X, y)
    _check_task(task)
    if lam < 0:
        raise ValueError("lam must be non-negative")
    n, p = X.shape
    if lam >= lambda_max(X, y, task):
        b = null_intercept(y, task)
        return LinearModel(np.zeros(p), b, float(lam), task, True, 0, kkt_residual(X, y, np.zeros(p), b, lam, task))
    A = np.hstack([X, np.ones((n, 1))])
    L_max = np.linalg.norm(A, 2) ** 2 / n
    if task == "clf":
        L_max /= 4.0
    L_max = max(L_max, 1e-12)

    w = np.zeros(p) if w0 is None else np.array(w0, dtype=float)
    b = null_intercept(y, task) if b0 is None else float(b0)
    z = X @ w + b
    F = _loss(z, y, task) + lam * np.abs(w).sum()
    yw, yb, zy, mom = w.copy(), b, z.copy(), 1.0
    L = L_max
    converged, kkt, it = False, np.inf, 0
    for it in range(1, max_iter + 1):
        r = _residual(zy, y, task)
        g = X.T @ r / n
        gb = r.mean()
        fy = _loss(zy, y, task)
        # backtracking on the local curvature, never above the global bound
        L_try = max(0.7 * L, 1e-6 * L_max)
        while True:
            w_new = soft_threshold(yw - g / L_try, lam / L_try)
            b_new = yb - gb / L_try
            z_new = X @ w_new + b_new
            f_new = _loss(z_new, y, task)
            d, db = w_new - yw, b_new - yb
            bound = fy + g @ d + gb * db + 0.5 * L_try * (d @ d + db * db)
            if L_try >= L_max or f_new <= bound + 1e-15 * abs(fy):
                break
            L_try = min(2.0 * L_try, L_max)
        L = L_try
        F_new = f_new + lam * np.abs(w_new).sum()
        rel = abs(F - F_new) / max(1.0, abs(F_new))
        # gradient restart: drop momentum once it points uphill
        if np.dot(yw - w_new, w_new - w) + (yb - b_new) * (b_new - b) > 0:
            mom_new, beta = 1.0, 0.0
        else:
            mom_new = 0.5 * (1 + np.sqrt(1 + 4 * mom * mom))
            beta = (mom - 1) / mom_new
        stalled = np.array_equal(w_new, w) and b_new == b
        yw = w_new + beta * (w_new - w)
        yb = b_new + beta * (b_new - b)
        zy = z_new + beta * (z_new - z)
        w, b, z, F, mom = w_new, b_new, z_new, F_new, mom_new
        if rel < tol or stalled:
            kkt = kkt_residual(X, y, w, b, lam, task)
            if kkt < kkt_tol:
                converged = True
                break
            if stalled:
                break
    else:
        kkt = kkt_residual(X, y, w, b, lam, task)
    return LinearModel(w, float(b), float(lam), task, converged, it, float(kkt))


def validation_loss(model: LinearModel, X, y) -> float:
    z = model.decision_function(X)
    if model.task == "reg":
        return float(np.mean((np.clip(z, 0, 1) - y) ** 2))
    return float(_loss(z, np.asarray(y, dtype=float), "clf"))


def fit_lasso(
    X_train, y_train, X_val, y_val, task="reg", grid=LAMBDA_GRID, patience=3, max_iter=5000, **solver
) -> LinearModel:
    """Fit along the penalty grid (largest first, warm-started) and keep the
    model with the lowest validation loss.

    The path stops once ``patience`` consecutive penalties fail to improve
    the validation loss. Each penalty gets at most ``max_iter`` iterations;
    the returned model records whether it converged.
    """
    _check_task(task)
    X_val, y_val = _check_inputs(X_val, y_val)
    best, best_loss, stale = None, np.inf, 0
    w0 = b0 = None
    for lam in sorted(grid, reverse=True):
        m = solve_lasso(X_train, y_train, lam, task, w0=w0, b0=b0, max_iter=max_iter, **solver)
        w0, b0 = m.weights, m.bias
        loss = validation_loss(m, X_val, y_val)
        if loss < best_loss:
            best, best_loss, stale = m, loss, 0
        elif np.any(m.weights):
            # penalties at or above lambda_max all give the null model
            stale += 1
            if patience is not None and stale >= patience:
                break
    return best
