"""Cox proportional-hazards model for the survival metric ``v``.

Training records are predicted instances that stayed matched to the same
ground-truth object for the last ``window + 1`` frames. Their survival time is
the number of consecutive frames, counted from the current one, in which that
object is still annotated; objects alive in the last frame are right-censored.
The covariates are the windowed single-frame metrics plus the score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evaluation import TP_IOU, assign_iou
from .features import DISPERSION, GEOMETRY, TimeSeriesRow

__all__ = [
    "SurvivalRecord",
    "CoxModel",
    "CoxFitError",
    "covariate_base_names",
    "build_survival_records",
    "cox_partial_loglik",
    "fit_cox",
    "predict_survival",
    "kaplan_meier",
]

WINDOW = 5


class CoxFitError(RuntimeError):
    pass


@dataclass
class SurvivalRecord:
    covariates: np.ndarray
    observed_time: int
    censored: bool
    key: tuple = ()


def covariate_base_names(available) -> tuple[str, ...]:
    """Single-frame metrics plus score, restricted to what ``available`` offers."""
    avail = set(available)
    return tuple(n for n in (*GEOMETRY, *DISPERSION, "s") if n in avail)


def build_survival_records(rows: list[TimeSeriesRow], seq, window: int = WINDOW, base_names=None) -> list[SurvivalRecord]:
    """Survival training records for one sequence with ground truth.

    Parameters
    ----------
    rows : list of TimeSeriesRow
        Windowed metrics of the tracked predictions of ``seq`` with
        ``n_c >= window``.
    seq : Sequence
        Predictions and ground truth (``seq.gt`` must be set).
    """
    if seq.gt is None:
        raise ValueError(f"sequence {seq.id!r} has no ground truth")
    if not rows:
        return []
    names = rows[0].names
    base = covariate_base_names(names) if base_names is None else tuple(base_names)
    cols = [names.index(n) for n in base]
    if rows[0].n_c < window:
        raise ValueError(f"rows carry {rows[0].n_c} past frames, survival needs {window}")
    matched = {}
    for fr, g in zip(seq.frames, seq.gt):
        for a in assign_iou(fr, g):
            if a.iou >= TP_IOU:
                matched[(a.frame, a.local_id)] = a.gt_track_id
    local = {(r.track_id, r.frame): r.local_id for r in rows if r.sequence == seq.id}
    present = [{gi.track_id for gi in g.instances} for g in seq.gt]
    T = len(seq.gt)
    out = []
    for r in rows:
        if r.sequence != seq.id:
            continue
        t = r.frame
        targets = set()
        for k in range(t - window, t + 1):
            lid = local.get((r.track_id, k))
            targets.add(None if lid is None else matched.get((k, lid)))
        if len(targets) != 1 or None in targets:
            continue
        (gid,) = targets
        n = 0
        while t - 1 + n < T and gid in present[t - 1 + n]:
            n += 1
        censored = t - 1 + n == T
        x = r.values[: window + 1, cols].reshape(-1, order="F")
        out.append(SurvivalRecord(x, n, censored, (seq.id, r.track_id, t)))
    return out


def cox_partial_loglik(beta, X, time, event):
    """Breslow partial log-likelihood with gradient and Hessian.

    Returns
    -------
    ll : float
    grad : ndarray, shape (p,)
    hess : ndarray, shape (p, p)
    """
    beta = np.asarray(beta, dtype=float)
    X = np.asarray(X, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    n, p = X.shape
    eta = X @ beta
    c = eta.max() if n else 0.0
    w = np.exp(eta - c)
    ll = 0.0
    grad = np.zeros(p)
    hess = np.zeros((p, p))
    s0 = 0.0
    s1 = np.zeros(p)
    s2 = np.zeros((p, p))
    # risk sets are nested: walk distinct times from the latest down
    for tau in np.unique(time)[::-1]:
        at = time == tau
        wx = w[at, None] * X[at]
        s0 += w[at].sum()
        s1 += wx.sum(axis=0)
        s2 += X[at].T @ wx
        ev = at & event
        d = int(ev.sum())
        if d == 0:
            continue
        ll += eta[ev].sum() - d * (np.log(s0) + c)
        mean = s1 / s0
        grad += X[ev].sum(axis=0) - d * mean
        hess -= d * (s2 / s0 - np.outer(mean, mean))
    return float(ll), grad, hess


def kaplan_meier(time, event) -> tuple[np.ndarray, np.ndarray]:
    """Event times and product-limit survival just after each of them."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    taus = np.unique(time[event])
    surv = []
    s = 1.0
    for tau in taus:
        n_risk = np.sum(time >= tau)
        d = np.sum((time == tau) & event)
        s *= 1.0 - d / n_risk
        surv.append(s)
    return taus, np.array(surv)


@dataclass
class CoxModel:
    """Fitted Cox model.

    ``beta`` acts on standardised covariates ``(x - mean) / scale``;
    ``coef`` is the same effect expressed per raw covariate unit. The
    baseline is stored as logarithms of the Breslow hazard increments at the
    distinct event times ``event_times``, for a covariate vector equal to the
    training mean. Survival follows the product-limit form
    ``S(t | x) = prod_{tau <= t} (1 - h_tau) ** exp(eta(x))``, which reduces
    to the Kaplan-Meier curve when all coefficients are zero.
    """

    covariate_names: tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray
    beta: np.ndarray
    event_times: np.ndarray
    log_hazard: np.ndarray
    base_names: tuple[str, ...] = ()
    window: int = WINDOW
    loglik_trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def coef(self) -> np.ndarray:
        return self.beta / self.scale

    @property
    def hazard(self) -> np.ndarray:
        return np.exp(self.log_hazard)

    @property
    def cumulative_hazard(self) -> np.ndarray:
        return np.cumsum(self.hazard)

    def linear_predictor(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.mean):
            raise ValueError(f"expected {len(self.mean)} covariates, got {X.shape[1]}")
        return ((X - self.mean) / self.scale) @ self.beta

    def survival_curve(self, X) -> np.ndarray:
        """Survival just after each event time, shape (n, n_events)."""
        eta = self.linear_predictor(X)
        lh = np.minimum(self.log_hazard, 0.0)
        h = np.exp(lh)
        with np.errstate(divide="ignore"):
            # log(-log(1 - h)), stable for tiny h and infinite at h == 1
            ratio = np.where(h > 0, -np.log1p(-np.minimum(h, 1.0)) / np.where(h > 0, h, 1.0), 1.0)
            lnl = lh + np.log(ratio)
        with np.errstate(over="ignore"):
            # overflow means survival 0, which -inf yields exactly
            steps = -np.exp(eta[:, None] + lnl[None, :])
        return np.exp(np.cumsum(steps, axis=1))

    def predict(self, X) -> np.ndarray:
        """Expected survival time, integrated up to the last event time."""
        S = self.survival_curve(X)
        if S.shape[1] == 0:
            return np.zeros(S.shape[0])
        widths = np.diff(np.concatenate([[0.0], self.event_times]))
        before = np.hstack([np.ones((S.shape[0], 1)), S[:, :-1]])
        return before @ widths

    def to_dict(self) -> dict:
        return {
            "covariate_names": list(self.covariate_names),
            "base_names": list(self.base_names),
            "window": self.window,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "beta": self.beta.tolist(),
            "event_times": self.event_times.tolist(),
            "log_hazard": self.log_hazard.tolist(),
            "converged": self.converged,
            "loglik_trace": list(self.loglik_trace),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoxModel":
        return cls(
            covariate_names=tuple(d["covariate_names"]),
            mean=np.array(d["mean"], dtype=float),
            scale=np.array(d["scale"], dtype=float),
            beta=np.array(d["beta"], dtype=float),
            event_times=np.array(d["event_times"], dtype=float),
            log_hazard=np.array(d["log_hazard"], dtype=float),
            base_names=tuple(d.get("base_names", ())),
            window=int(d.get("window", WINDOW)),
            loglik_trace=list(d.get("loglik_trace", [])),
            converged=bool(d.get("converged", False)),
        )


def _canonical_order(X, time, event):
    keys = [X[:, j] for j in range(X.shape[1] - 1, -1, -1)] + [event, time]
    return np.lexsort(keys)


def fit_cox(
    records,
    covariate_names=None,
    base_names=(),
    window: int = WINDOW,
    tol: float = 1e-8,
    max_iter: int = 100,
    max_halvings: int = 30,
) -> CoxModel:
    """Maximise the Breslow partial likelihood by damped Newton steps.

    Covariates are standardised with the training mean and standard
    deviation. Records are put in a canonical order first, so the result
    does not depend on how they were supplied.
    """
    records = list(records)
    if len(records) < 2:
        raise CoxFitError("need at least two survival records")
    X = np.stack([np.asarray(r.covariates, dtype=float) for r in records])
    time = np.array([r.observed_time for r in records], dtype=float)
    event = np.array([not r.censored for r in records], dtype=bool)
    if not event.any():
        raise CoxFitError("no uncensored events; the Cox model cannot be fitted")
    if not np.all(np.isfinite(X)):
        raise CoxFitError("covariates must be finite")
    order = _canonical_order(X, time, event)
    X, time, event = X[order], time[order], event[order]
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    p = Z.shape[1]
    beta = np.zeros(p)
    ll, g, H = cox_partial_loglik(beta, Z, time, event)
    trace = [ll]
    converged = bool(np.max(np.abs(g), initial=0.0) < tol)
    it = 0
    while not converged and it < max_iter:
        it += 1
        step = np.linalg.lstsq(-H, g, rcond=None)[0]
        t = 1.0
        for _ in range(max_halvings + 1):
            cand = beta + t * step
            ll_c, g_c, H_c = cox_partial_loglik(cand, Z, time, event)
            if np.isfinite(ll_c) and ll_c >= ll:
                break
            t *= 0.5
        else:
            if not np.isfinite(ll_c):
                raise CoxFitError(f"non-finite partial likelihood after {max_halvings} step halvings")
            # no ascent direction left at machine precision
            break
        beta, ll, g, H = cand, ll_c, g_c, H_c
        trace.append(ll)
        converged = bool(np.max(np.abs(g)) < tol)
    eta = Z @ beta
    c = eta.max()
    w = np.exp(eta - c)
    taus = np.unique(time[event])
    log_hazard = np.empty(len(taus))
    for k, tau in enumerate(taus):
        d = np.sum((time == tau) & event)
        log_hazard[k] = np.log(d) - c - np.log(w[time >= tau].sum())
    if covariate_names is None:
        if base_names:
            covariate_names = tuple(f"{n}_{k}" for n in base_names for k in range(window + 1))
        else:
            covariate_names = tuple(f"x{j}" for j in range(p))
    return CoxModel(
        covariate_names=tuple(covariate_names),
        mean=mean,
        scale=scale,
        beta=beta,
        event_times=taus,
        log_hazard=log_hazard,
        base_names=tuple(base_names),
        window=window,
        loglik_trace=trace,
        converged=converged,
    )


def predict_survival(model: CoxModel | None, covariates) -> np.ndarray:
    if model is None:
        raise ValueError("survival model is not fitted")
    return model.predict(covariates)
