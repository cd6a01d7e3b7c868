"""Per-instance metrics and their time-series windows.

Metric names used in tables:

geometry (always)
    ``S`` size, ``S_in`` / ``S_bd`` inner and boundary size, ``rel_bd`` boundary
    fraction, ``center_v`` / ``center_h`` centre divided by frame height /
    width, ``h`` / ``w`` bounding-box extent.
dispersion (only with a probability map)
    ``E*`` mean normalised entropy, ``V*`` mean variation ratio
    (``1 - max p``), ``M*`` mean margin between the two largest
    probabilities; each over the whole mask, ``_in`` the inner part and
    ``_bd`` the boundary.
temporal
    ``s`` score, ``f`` shape preservation, ``d_c`` centre deviation, ``d_s``
    size deviation, ``v`` expected survival (needs a fitted Cox model),
    ``r`` height/width ratio relative to the class average (needs
    ground-truth ratios).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Instance, Sequence
from .geometry import (
    EmptyShiftError,
    PixelMask,
    bounding_extent,
    geometric_center,
    overlap,
    shift,
    split_inner_boundary,
)
from .tracker import TrackedInstance, TrackHistory, _linear_extrapolate

__all__ = [
    "GEOMETRY",
    "DISPERSION",
    "TEMPORAL",
    "ID_COLUMNS",
    "MAX_NC",
    "DEVIATION_WINDOW",
    "InstanceMetrics",
    "TimeSeriesRow",
    "dispersion_heatmaps",
    "single_frame_metrics",
    "shape_preservation",
    "center_and_size_deviation",
    "gt_class_ratios",
    "ratio_metric",
    "compute_metrics",
    "add_survival_metric",
    "assemble_timeseries",
    "rows_to_records",
    "records_to_matrix",
    "metric_names",
]

GEOMETRY = ("S", "S_in", "S_bd", "rel_bd", "center_v", "center_h", "h", "w")
DISPERSION = ("E", "E_in", "E_bd", "V", "V_in", "V_bd", "M", "M_in", "M_bd")
TEMPORAL = ("s", "f", "d_c", "d_s", "v", "r")
ID_COLUMNS = ("sequence", "track_id", "frame", "local_id", "class")
MAX_NC = 10
DEVIATION_WINDOW = 5


@dataclass
class InstanceMetrics:
    sequence: str
    track_id: int
    frame: int
    local_id: int
    class_label: int
    values: dict[str, float]


@dataclass
class TimeSeriesRow:
    """Metrics of one instance at frame ``t`` and ``n_c`` earlier frames.

    ``values[k]`` holds frame ``t - k``; ``present[k]`` is false where the
    track was not observed and the slot was padded.
    """

    sequence: str
    track_id: int
    frame: int
    local_id: int
    class_label: int
    names: tuple[str, ...]
    values: np.ndarray
    present: np.ndarray

    @property
    def n_c(self) -> int:
        return len(self.present) - 1

    def record(self) -> dict:
        rec = {
            "sequence": self.sequence,
            "track_id": self.track_id,
            "frame": self.frame,
            "local_id": self.local_id,
            "class": self.class_label,
        }
        for m, name in enumerate(self.names):
            for k in range(self.n_c + 1):
                rec[f"{name}_{k}"] = float(self.values[k, m])
        for k in range(self.n_c + 1):
            rec[f"present_{k}"] = int(self.present[k])
        return rec


def dispersion_heatmaps(prob_map: np.ndarray) -> np.ndarray:
    """Per-pixel ``(entropy / log C, 1 - max p, p_max - p_second)``, shape (H, W, 3)."""
    p = np.asarray(prob_map, dtype=np.float64)
    C = p.shape[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    ent = -plogp.sum(axis=2) / np.log(C)
    top2 = np.sort(p, axis=2)[:, :, -2:]
    var = 1.0 - top2[:, :, 1]
    margin = top2[:, :, 1] - top2[:, :, 0]
    return np.clip(np.stack([ent, var, margin], axis=2), 0.0, 1.0)


def _mean_over(heat: np.ndarray, mask: PixelMask) -> np.ndarray:
    rows, cols = mask.pixels()
    return heat[rows, cols].mean(axis=0)


def single_frame_metrics(inst: Instance, prob_map: np.ndarray | None = None, heatmaps=None) -> dict:
    """Geometry and, with a probability map, dispersion metrics of ``inst``.

    ``heatmaps`` may be passed to reuse a precomputed
    :func:`dispersion_heatmaps` result for the frame.
    """
    m = inst.mask
    inner, bd = split_inner_boundary(m)
    c = geometric_center(m)
    H, W = m.dims.shape
    h, w = bounding_extent(m)
    out = {
        "S": float(m.size),
        "S_in": float(inner.size),
        "S_bd": float(bd.size),
        "rel_bd": bd.size / m.size,
        "center_v": c.v / H,
        "center_h": c.h / W,
        "h": float(h),
        "w": float(w),
    }
    if heatmaps is None and prob_map is not None:
        heatmaps = dispersion_heatmaps(prob_map)
    if heatmaps is not None:
        whole = _mean_over(heatmaps, m)
        bdv = _mean_over(heatmaps, bd)
        inn = _mean_over(heatmaps, inner) if inner else whole
        for k, key in enumerate("EVM"):
            out[key] = float(whole[k])
            out[f"{key}_in"] = float(inn[k])
            out[f"{key}_bd"] = float(bdv[k])
    return out


def shape_preservation(prev: PixelMask, curr: PixelMask) -> float:
    """Overlap of ``curr`` with ``prev`` moved onto ``curr``'s centre."""
    delta = geometric_center(curr) - geometric_center(prev)
    try:
        return overlap(shift(prev, delta), curr)
    except EmptyShiftError:
        return 0.0


def center_and_size_deviation(history: TrackHistory, track_id: int, t: int, window: int = DEVIATION_WINDOW):
    """Distance of centre and size at ``t`` from their linear predictions.

    Returns ``(d_c, d_s, valid)``; ``valid`` is false, and both deviations
    zero, when fewer than two observations exist in ``t-window .. t-1``.
    """
    cur = history.get(track_id, t)
    if cur is None:
        raise KeyError(f"track {track_id} not observed at frame {t}")
    obs = history.window(track_id, t - window, t - 1)
    if len(obs) < 2:
        return 0.0, 0.0, False
    k = np.array([o[0] for o in obs], dtype=float)
    y = np.array([[o[1].center.v, o[1].center.h, o[1].size] for o in obs], dtype=float)
    pred = _linear_extrapolate(k, y, t)
    d_c = float(np.hypot(pred[0] - cur.center.v, pred[1] - cur.center.h))
    d_s = float(abs(pred[2] - cur.size))
    return d_c, d_s, True


def gt_class_ratios(gt_frames, classes=None) -> dict[int, float]:
    """Mean bounding-box height/width per class over ground-truth observations.

    Parameters
    ----------
    gt_frames : iterable of GroundTruthFrame
        Training-split ground truth only.
    classes : iterable of int, optional
        Classes that must be covered; missing ones raise ``ValueError``.
    """
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for g in gt_frames:
        for gi in g.instances:
            h, w = bounding_extent(gi.mask)
            sums[gi.class_label] = sums.get(gi.class_label, 0.0) + h / w
            counts[gi.class_label] = counts.get(gi.class_label, 0) + 1
    if classes is not None:
        missing = sorted(set(classes) - set(counts))
        if missing:
            raise ValueError(f"no ground-truth instances for classes {missing}")
    if not counts:
        raise ValueError("no ground-truth instances")
    return {c: sums[c] / counts[c] for c in sorted(counts)}


def ratio_metric(inst: Instance, ratios: dict[int, float]) -> float:
    if inst.class_label not in ratios:
        raise ValueError(f"no ground-truth height/width ratio for class {inst.class_label}")
    h, w = bounding_extent(inst.mask)
    return (h / w) / ratios[inst.class_label]


def metric_names(has_prob: bool, with_v: bool = False, with_r: bool = False) -> tuple[str, ...]:
    names = list(GEOMETRY)
    if has_prob:
        names += DISPERSION
    names += ["s", "f", "d_c", "d_s"]
    if with_v:
        names.append("v")
    if with_r:
        names.append("r")
    return tuple(names)


def compute_metrics(
    seq: Sequence,
    tracked: list[list[TrackedInstance]],
    history: TrackHistory,
    ratios: dict[int, float] | None = None,
) -> list[InstanceMetrics]:
    """Metrics of every tracked instance except the survival metric ``v``.

    ``f`` compares against the most recent earlier observation of the track
    within the deviation window and is 0 for a track's first appearance.
    """
    if len(tracked) != len(seq.frames):
        raise ValueError("tracking output does not cover the sequence")
    has_prob = all(fr.prob_map is not None for fr in seq.frames)
    out = []
    for fr, tr in zip(seq.frames, tracked):
        t = fr.index
        heat = dispersion_heatmaps(fr.prob_map) if has_prob else None
        for ti in tr:
            inst = ti.instance
            vals = single_frame_metrics(inst, heatmaps=heat)
            vals["s"] = float(inst.score)
            earlier = history.window(ti.track_id, t - DEVIATION_WINDOW, t - 1)
            vals["f"] = shape_preservation(earlier[-1][1].mask, inst.mask) if earlier else 0.0
            d_c, d_s, _ = center_and_size_deviation(history, ti.track_id, t)
            vals["d_c"], vals["d_s"] = d_c, d_s
            if ratios is not None:
                vals["r"] = ratio_metric(inst, ratios)
            out.append(InstanceMetrics(seq.id, ti.track_id, t, inst.local_id, inst.class_label, vals))
    return out


def assemble_timeseries(metrics: list[InstanceMetrics], n_c: int, names=None) -> list[TimeSeriesRow]:
    """Window every instance's metrics over frames ``t - n_c .. t``.

    Unobserved slots copy the nearest observed earlier slot inside the window,
    or the frame-``t`` values when there is none.
    """
    if not 0 <= n_c <= MAX_NC:
        raise ValueError(f"n_c must lie in [0, {MAX_NC}], got {n_c}")
    if not metrics:
        return []
    if names is None:
        names = tuple(metrics[0].values)
    names = tuple(names)
    by_key = {(m.sequence, m.track_id, m.frame): m for m in metrics}
    rows = []
    for m in metrics:
        vals = np.empty((n_c + 1, len(names)))
        present = np.zeros(n_c + 1, dtype=bool)
        own = np.array([m.values[n] for n in names])
        for k in range(n_c + 1):
            o = by_key.get((m.sequence, m.track_id, m.frame - k))
            if o is not None:
                vals[k] = [o.values[n] for n in names]
                present[k] = True
        for k in range(1, n_c + 1):
            if present[k]:
                continue
            src = next((q for q in range(k + 1, n_c + 1) if present[q]), None)
            vals[k] = own if src is None else vals[src]
        rows.append(
            TimeSeriesRow(m.sequence, m.track_id, m.frame, m.local_id, m.class_label, names, vals, present)
        )
    return rows


def add_survival_metric(metrics: list[InstanceMetrics], model) -> list[InstanceMetrics]:
    """Insert ``v`` predicted by a fitted :class:`~tempmeta.survival.CoxModel`.

    ``v`` is placed before ``r`` so column order stays canonical.
    """
    rows = assemble_timeseries(metrics, model.window, names=model.base_names)
    X = np.stack([r.values.reshape(-1, order="F") for r in rows]) if rows else np.zeros((0, 0))
    v = model.predict(X) if rows else np.zeros(0)
    out = []
    for m, vi in zip(metrics, v):
        vals = {}
        for k, val in m.values.items():
            if k == "r":
                vals["v"] = float(vi)
            vals[k] = val
        if "v" not in vals:
            vals["v"] = float(vi)
        out.append(InstanceMetrics(m.sequence, m.track_id, m.frame, m.local_id, m.class_label, vals))
    return out


def rows_to_records(rows: list[TimeSeriesRow]) -> list[dict]:
    return [r.record() for r in rows]


def records_to_matrix(records: list[dict], columns=None) -> tuple[np.ndarray, list[str]]:
    """Numeric feature matrix from table records, dropping identification columns."""
    if columns is None:
        columns = [c for c in records[0] if c not in ID_COLUMNS]
    X = np.array([[float(r[c]) for c in columns] for r in records], dtype=float)
    return X, list(columns)


def rows_from_records(records: list[dict]) -> list[TimeSeriesRow]:
    """Inverse of :func:`rows_to_records` for tables read back from CSV."""
    if not records:
        return []
    cols = [c for c in records[0] if c not in ID_COLUMNS]
    names, n_c = [], 0
    for c in cols:
        name, _, k = c.rpartition("_")
        if name == "present":
            n_c = max(n_c, int(k))
        elif name not in names:
            names.append(name)
    rows = []
    for r in records:
        vals = np.array([[float(r[f"{n}_{k}"]) for n in names] for k in range(n_c + 1)])
        present = np.array([bool(int(float(r[f"present_{k}"]))) for k in range(n_c + 1)])
        rows.append(TimeSeriesRow(str(r["sequence"]), int(r["track_id"]), int(r["frame"]), int(r["local_id"]),
                                  int(r["class"]), tuple(names), vals, present))
    return rows
