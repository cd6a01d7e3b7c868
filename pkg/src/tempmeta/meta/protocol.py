"""Repeated random train/validation/test evaluation of a meta model family."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..evaluation import accuracy, auroc, r_squared, std_error
from .dataset import MetaDataset
from .models import decision_function, fit_meta, predict, target

SPLIT = (0.7, 0.1, 0.2)
MIN_ROWS = 50
MAX_ATTEMPTS = 10


class ProtocolError(RuntimeError):
    pass


def split_sizes(n: int) -> tuple[int, int, int]:
    n_train = int(round(SPLIT[0] * n))
    n_val = int(round(SPLIT[1] * n))
    return n_train, n_val, n - n_train - n_val


def _split(ds: MetaDataset, rng, group_split: bool):
    n = len(ds)
    if not group_split:
        perm = rng.permutation(n)
        a, b, _ = split_sizes(n)
        return perm[:a], perm[a : a + b], perm[a + b :]
    groups = ds.groups
    uniq = sorted(set(groups))
    perm = rng.permutation(len(uniq))
    a, b, _ = split_sizes(len(uniq))
    part = {}
    for pos, gi in enumerate(perm):
        part[uniq[gi]] = 0 if pos < a else 1 if pos < a + b else 2
    lab = np.array([part[g] for g in groups])
    return tuple(np.nonzero(lab == s)[0] for s in range(3))


def _scores(model, ds: MetaDataset, task: str) -> dict:
    y = target(ds, task)
    if task == "clf":
        pred = predict(model, ds)
        return {"acc": accuracy((pred >= 0.5).astype(int), ds.label), "auroc": auroc(decision_function(model, ds), ds.label)}
    pred = predict(model, ds)
    out = {"sigma": std_error(pred, y), "r2": r_squared(pred, y)}
    if np.ptp(y) == 0:
        # constant target: R^2 is undefined, report a perfect fit as 1
        out["r2"] = 1.0 if np.array_equal(pred, y) else float("nan")
        out["degenerate"] = True
    return out


def _one_run(ds, family, task, seed, run, group_split):
    rng = np.random.default_rng([seed, run])
    for attempt in range(1, MAX_ATTEMPTS + 1):
        tr, va, te = _split(ds, rng, group_split)
        if task != "clf" or all(len(np.unique(ds.label[i])) == 2 for i in (tr, te)):
            break
    else:
        raise ProtocolError(f"run {run}: no split with both classes in train and test after {MAX_ATTEMPTS} attempts")
    train, val, test = ds.take(tr), ds.take(va), ds.take(te)
    model = fit_meta(family, task, train, val, seed=int(rng.integers(2**31)))
    return {
        "run": run,
        "attempts": attempt,
        "n_train": len(tr),
        "n_val": len(va),
        "n_test": len(te),
        "train": _scores(model, train, task),
        "test": _scores(model, test, task),
    }


def _summary(runs) -> dict:
    out = {}
    for part in ("train", "test"):
        degenerate = any(r[part].get("degenerate", False) for r in runs)
        for k in runs[0][part]:
            if k == "degenerate":
                continue
            vals = np.array([r[part][k] for r in runs], dtype=float)
            if np.all(np.isfinite(vals)):
                entry = {"mean": float(vals.mean()), "std": float(vals.std())}
            else:
                entry = {"mean": None, "std": None}
            if degenerate or not np.all(np.isfinite(vals)):
                entry["degenerate"] = True
            out[f"{part}_{k}"] = entry
    return out


def run_protocol(
    dataset: MetaDataset,
    family: str,
    task: str,
    n_c: int | None = None,
    runs: int = 10,
    seed: int = 0,
    metrics=None,
    group_split: bool = False,
    workers: int | None = None,
) -> dict:
    """Fit and score ``family`` on ``runs`` seeded 70/10/20 splits.

    Parameters
    ----------
    dataset : MetaDataset
    family : {"lr_l1", "gb", "nn_l2"}
    task : {"clf", "reg"}
    n_c : int, optional
        Number of past frames to use; all available when omitted.
    metrics : sequence of str, optional
        Restrict the features to these metrics.
    group_split : bool
        Split whole tracks instead of rows.

    Returns
    -------
    dict
        Per-run sizes and scores, plus mean and standard deviation of each
        score over the runs.
    """
    if len(dataset) < MIN_ROWS:
        raise ProtocolError(f"dataset has {len(dataset)} rows, the protocol needs at least {MIN_ROWS}")
    ds = dataset.select(metrics, n_c) if (metrics is not None or n_c is not None) else dataset
    if ds.X.shape[1] == 0:
        raise ProtocolError("no feature columns selected")
    with ThreadPoolExecutor(max_workers=workers) as ex:
        results = list(ex.map(lambda r: _one_run(ds, family, task, seed, r, group_split), range(runs)))
    return {
        "family": family,
        "task": task,
        "n_c": ds.n_c if n_c is None else n_c,
        "metrics": list(ds.metrics),
        "n_rows": len(ds),
        "n_features": ds.X.shape[1],
        "seed": seed,
        "group_split": group_split,
        "runs": results,
        "summary": _summary(results),
    }


def crossfit_probabilities(dataset: MetaDataset, family: str = "gb", folds: int = 5, seed: int = 0) -> np.ndarray:
    """Out-of-fold TP probabilities for every row.

    Whole tracks are assigned to folds so no instance is scored by a model
    that saw another frame of the same track. Within each training part one
    eighth of the tracks is held out for validation.
    """
    groups = dataset.groups
    uniq = sorted(set(groups))
    if len(uniq) < folds:
        raise ProtocolError(f"{len(uniq)} tracks cannot fill {folds} folds")
    rng = np.random.default_rng([seed, 1_000_003])
    fold_of = dict(zip(uniq, rng.permutation(len(uniq)) % folds))
    fold = np.array([fold_of[g] for g in groups])
    sub = dict(zip(uniq, rng.random(len(uniq)) < 0.125))
    is_val = np.array([sub[g] for g in groups])
    out = np.empty(len(dataset))
    labels = dataset.label
    for f in range(folds):
        test = fold == f
        tr = ~test & ~is_val
        va = ~test & is_val
        if len(np.unique(labels[tr])) < 2:
            raise ProtocolError(f"fold {f}: training part has a single class")
        if not va.any():
            va = tr
        model = fit_meta(family, "clf", dataset.take(np.nonzero(tr)[0]), dataset.take(np.nonzero(va)[0]), seed=seed + f)
        out[test] = predict(model, dataset.take(np.nonzero(test)[0]))
    return out
