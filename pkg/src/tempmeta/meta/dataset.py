"""Feature matrix plus IoU targets for meta classification and regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..evaluation import TP_IOU
from ..features import ID_COLUMNS


def split_column(col: str) -> tuple[str, int]:
    """``"S_in_3"`` -> ``("S_in", 3)``."""
    name, _, k = col.rpartition("_")
    if not name or not k.isdigit():
        raise ValueError(f"column {col!r} is not of the form <metric>_<k>")
    return name, int(k)


@dataclass
class MetaDataset:
    """One row per tracked prediction.

    ``keys`` holds ``(sequence, track_id, frame, local_id)``; the group of a
    row is its ``(sequence, track_id)`` pair.
    """

    X: np.ndarray
    feature_names: tuple[str, ...]
    target_iou: np.ndarray
    keys: list

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.target_iou = np.asarray(self.target_iou, dtype=float)
        self.feature_names = tuple(self.feature_names)
        n = len(self.target_iou)
        if self.X.shape != (n, len(self.feature_names)):
            raise ValueError(f"X has shape {self.X.shape}, expected ({n}, {len(self.feature_names)})")
        if len(self.keys) != n:
            raise ValueError("one key per row required")
        if not np.all(np.isfinite(self.X)):
            bad = sorted({self.feature_names[j] for j in np.nonzero(~np.isfinite(self.X))[1]})
            raise ValueError(f"non-finite feature values in columns {bad}")
        if not np.all((self.target_iou >= 0) & (self.target_iou <= 1)):
            raise ValueError("target IoU outside [0, 1]")

    def __len__(self) -> int:
        return len(self.target_iou)

    @property
    def label(self) -> np.ndarray:
        return (self.target_iou >= TP_IOU).astype(int)

    @property
    def groups(self) -> list:
        return [(k[0], k[1]) for k in self.keys]

    @property
    def n_c(self) -> int:
        return max((split_column(c)[1] for c in self.feature_names), default=0)

    @property
    def metrics(self) -> tuple[str, ...]:
        out = []
        for c in self.feature_names:
            name = split_column(c)[0]
            if name != "present" and name not in out:
                out.append(name)
        return tuple(out)

    def select(self, metrics=None, n_c: int | None = None) -> "MetaDataset":
        """Restrict to some metrics and to frames ``t - n_c .. t``.

        Presence flags of the kept past frames are retained whenever any
        past frame is kept.
        """
        if n_c is not None and n_c > self.n_c:
            raise ValueError(f"dataset carries n_c = {self.n_c}, asked for {n_c}")
        wanted = None if metrics is None else set(metrics)
        if wanted is not None:
            missing = sorted(wanted - set(self.metrics))
            if missing:
                raise ValueError(f"metrics not in dataset: {missing}")
        cols = []
        for j, c in enumerate(self.feature_names):
            name, k = split_column(c)
            if n_c is not None and k > n_c:
                continue
            if name == "present":
                if k == 0:
                    continue
            elif wanted is not None and name not in wanted:
                continue
            cols.append(j)
        return MetaDataset(self.X[:, cols], [self.feature_names[j] for j in cols], self.target_iou, self.keys)

    def take(self, idx) -> "MetaDataset":
        idx = np.asarray(idx, dtype=int)
        return MetaDataset(self.X[idx], self.feature_names, self.target_iou[idx], [self.keys[i] for i in idx])

    @classmethod
    def from_records(cls, records, targets) -> "MetaDataset":
        """Join feature records with targets.

        Parameters
        ----------
        records : list of dict
            Rows as written by the features stage.
        targets : dict or list of dict
            ``{(sequence, frame, local_id): iou}``, or records with those
            columns plus ``iou``.
        """
        if not records:
            raise ValueError("no feature records")
        if not isinstance(targets, dict):
            targets = {(str(t["sequence"]), int(t["frame"]), int(t["local_id"])): float(t["iou"]) for t in targets}
        cols = [c for c in records[0] if c not in ID_COLUMNS]
        X = np.array([[float(r[c]) for c in cols] for r in records], dtype=float)
        keys, y = [], []
        for r in records:
            k = (str(r["sequence"]), int(r["frame"]), int(r["local_id"]))
            if k not in targets:
                raise ValueError(f"no target for sequence {k[0]!r} frame {k[1]} instance {k[2]}")
            keys.append((k[0], int(r["track_id"]), k[1], k[2]))
            y.append(targets[k])
        return cls(X, cols, np.array(y), keys)

    def concat(self, other: "MetaDataset") -> "MetaDataset":
        if other.feature_names != self.feature_names:
            raise ValueError("feature schemas differ")
        return MetaDataset(
            np.vstack([self.X, other.X]),
            self.feature_names,
            np.concatenate([self.target_iou, other.target_iou]),
            list(self.keys) + list(other.keys),
        )
