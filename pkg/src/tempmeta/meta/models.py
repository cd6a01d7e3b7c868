"""Fitted meta model bundled with its feature schema and standardisation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .dataset import MetaDataset
from .gb import GBModel, fit_gb
from .lasso import LinearModel, fit_lasso, sigmoid
from .nn import ShallowNet, fit_nn

FAMILIES = ("lr_l1", "gb", "nn_l2")
_ESTIMATORS = {"lr_l1": LinearModel, "gb": GBModel, "nn_l2": ShallowNet}


class SchemaError(ValueError):
    pass


@dataclass
class MetaModel:
    family: str
    task: str
    feature_names: tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray
    estimator: object

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "task": self.task,
            "feature_names": list(self.feature_names),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "estimator": self.estimator.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "MetaModel":
        est = _ESTIMATORS[d["family"]].from_dict(d["estimator"])
        return cls(d["family"], d["task"], tuple(d["feature_names"]), np.array(d["mean"], dtype=float),
                   np.array(d["scale"], dtype=float), est)


def standardizer(X) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def target(ds: MetaDataset, task: str) -> np.ndarray:
    return ds.label.astype(float) if task == "clf" else ds.target_iou


def fit_meta(family: str, task: str, train: MetaDataset, val: MetaDataset, seed: int = 0) -> MetaModel:
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}, got {family!r}")
    if val.feature_names != train.feature_names:
        raise SchemaError("train and validation feature schemas differ")
    mean, scale = standardizer(train.X)
    Xt = (train.X - mean) / scale
    Xv = (val.X - mean) / scale
    yt, yv = target(train, task), target(val, task)
    if family == "lr_l1":
        est = fit_lasso(Xt, yt, Xv, yv, task)
    elif family == "gb":
        est = fit_gb(Xt, yt, Xv, yv, task)
    else:
        est = fit_nn(Xt, yt, Xv, yv, task, seed=seed)
    return MetaModel(family, task, train.feature_names, mean, scale, est)


def _matrix(model: MetaModel, rows) -> np.ndarray:
    names = model.feature_names
    if isinstance(rows, MetaDataset):
        cols = dict(zip(rows.feature_names, rows.X.T))
    elif isinstance(rows, Mapping):
        cols = {k: np.asarray(v, dtype=float) for k, v in rows.items()}
    elif isinstance(rows, np.ndarray):
        X = np.atleast_2d(rows).astype(float)
        if X.shape[1] != len(names):
            raise SchemaError(f"expected {len(names)} feature columns, got {X.shape[1]}")
        return X
    else:
        rows = list(rows)
        missing = sorted(set(names) - set(rows[0])) if rows else []
        if missing:
            raise SchemaError(f"missing feature columns: {missing}")
        return np.array([[float(r[c]) for c in names] for r in rows], dtype=float)
    missing = [c for c in names if c not in cols]
    if missing:
        raise SchemaError(f"missing feature columns: {missing}")
    return np.column_stack([cols[c] for c in names]) if names else np.zeros((0, 0))


def decision_function(model: MetaModel, rows) -> np.ndarray:
    """Raw model output: logits for classification, unclamped IoU for regression."""
    X = _matrix(model, rows)
    return model.estimator.decision_function((X - model.mean) / model.scale)


def predict(model: MetaModel, rows) -> np.ndarray:
    """TP probabilities (classification) or IoU estimates clamped to [0, 1]."""
    z = decision_function(model, rows)
    return sigmoid(z) if model.task == "clf" else np.clip(z, 0.0, 1.0)
