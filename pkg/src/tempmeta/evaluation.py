"""Ground-truth matching and evaluation metrics.

Covers per-instance IoU assignment, the scalar metrics used for meta
classification and regression, Pearson correlation, CLEAR-MOT tracking
metrics, false-positive/false-negative threshold sweeps and average precision
at IoU 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dataio import Frame, GroundTruthFrame
from .geometry import bbox_center, geometric_center, intersection_size

__all__ = [
    "IoUAssignment",
    "MotReport",
    "SweepCurve",
    "TP_IOU",
    "assign_iou",
    "assign_sequence",
    "auroc",
    "accuracy",
    "r_squared",
    "std_error",
    "pearson",
    "mot_evaluate",
    "pool_mot",
    "sweep_thresholds",
    "fp_fn_at",
    "threshold_sweep",
    "average_precision_50",
]

TP_IOU = 0.5


@dataclass(frozen=True)
class IoUAssignment:
    frame: int
    local_id: int
    gt_track_id: int | None
    iou: float

    @property
    def is_tp(self) -> bool:
        return self.iou >= TP_IOU

    @property
    def label(self) -> str:
        return "tp" if self.is_tp else "fp"


def _iou_counts(a, b) -> tuple[int, int]:
    inter = intersection_size(a, b)
    return inter, a.size + b.size - inter


def assign_iou(pred: Frame, gt: GroundTruthFrame, sequence: str | None = None) -> list[IoUAssignment]:
    """Pair each prediction with its highest-IoU ground-truth instance of the same class.

    Several predictions may share one ground-truth instance. Ties go to the
    smaller track id; a prediction with no overlapping ground truth gets IoU 0.
    """
    if pred.index != gt.index:
        raise ValueError(f"frame {pred.index} paired with ground truth {gt.index}")
    gts = sorted(gt.instances, key=lambda g: g.track_id)
    out = []
    for p in sorted(pred.instances, key=lambda i: i.local_id):
        best_id, best = None, 0.0
        for g in gts:
            if g.class_label != p.class_label:
                continue
            inter, union = _iou_counts(p.mask, g.mask)
            if inter == 0:
                continue
            iou = inter / union
            if iou > best:
                best_id, best = g.track_id, iou
        out.append(IoUAssignment(pred.index, p.local_id, best_id, best))
    return out


def assign_sequence(seq) -> list[IoUAssignment]:
    if seq.gt is None:
        raise ValueError(f"sequence {seq.id!r} has no ground truth")
    return [a for fr, g in zip(seq.frames, seq.gt) for a in assign_iou(fr, g)]


# --- scalar metrics -----------------------------------------------------------------


def _midranks(x: np.ndarray) -> np.ndarray:
    _, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    return (upper - (counts - 1) / 2.0)[inv]


def auroc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative, ties counting half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative label")
    r = _midranks(s)
    # midranks are half-integers, so the numerator is exact
    u = r[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(preds, labels) -> float:
    p = np.asarray(preds).astype(bool)
    y = np.asarray(labels).astype(bool)
    return float(np.mean(p == y))


def r_squared(pred, target) -> float:
    """``1 - SSE/SST``; NaN when the target is constant."""
    p = np.asarray(pred, dtype=float)
    y = np.asarray(target, dtype=float)
    sse = np.sum((y - p) ** 2)
    sst = np.sum((y - y.mean()) ** 2)
    if sst == 0:
        return float("nan")
    return float(1.0 - sse / sst)


def std_error(pred, target) -> float:
    p = np.asarray(pred, dtype=float)
    y = np.asarray(target, dtype=float)
    return float(np.sqrt(np.mean((y - p) ** 2)))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("pearson needs two equally long columns with at least 2 rows")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise ValueError("correlation with a constant column is undefined")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))


# --- CLEAR-MOT ----------------------------------------------------------------------


@dataclass
class MotReport:
    MOTP_bb: float
    MOTP_geo: float
    MOTA: float
    fn_ratio: float
    fp_ratio: float
    mme_ratio: float
    GT: int
    MT: int
    PT: int
    ML: int
    precision: float
    recall: float
    counts: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def mot_evaluate(tracked_frames, gt_frames, iou_threshold: float = TP_IOU) -> MotReport:
    """CLEAR-MOT metrics of tracked predictions against a ground-truth sequence.

    Correspondences need mask IoU >= ``iou_threshold`` and equal class. A
    ground-truth track keeps the prediction id it had last time whenever that
    pairing is still valid; the remaining pairs are taken greedily by
    descending IoU. A mismatch is counted when a ground-truth track is matched
    to a different prediction id than at its previous match.
    """
    gt_frames = list(gt_frames)
    tracked_frames = list(tracked_frames)
    if len(tracked_frames) != len(gt_frames):
        raise ValueError("tracked predictions and ground truth differ in length")
    n_gt = sum(len(g.instances) for g in gt_frames)
    if n_gt == 0:
        raise ValueError("ground-truth sequence contains no instances")
    last_match: dict[int, int] = {}
    frames_seen: dict[int, int] = {}
    frames_tracked: dict[int, int] = {}
    fn = fp = mme = matches = 0
    d_geo, d_bb = [], []
    for preds, g in zip(tracked_frames, gt_frames):
        pairs = {}
        for gi in g.instances:
            frames_seen[gi.track_id] = frames_seen.get(gi.track_id, 0) + 1
            for ti in preds:
                if ti.instance.class_label != gi.class_label:
                    continue
                inter, union = _iou_counts(ti.instance.mask, gi.mask)
                if inter and inter / union >= iou_threshold:
                    pairs[(gi.track_id, ti.track_id)] = inter / union
        matched_gt, matched_pr = {}, set()
        for gid, pid in last_match.items():
            if (gid, pid) in pairs and pid not in matched_pr:
                matched_gt[gid] = pid
                matched_pr.add(pid)
        rest = sorted(
            ((iou, gid, pid) for (gid, pid), iou in pairs.items()),
            key=lambda x: (-x[0], x[1], x[2]),
        )
        for iou, gid, pid in rest:
            if gid in matched_gt or pid in matched_pr:
                continue
            matched_gt[gid] = pid
            matched_pr.add(pid)
        gmap = {gi.track_id: gi for gi in g.instances}
        pmap = {ti.track_id: ti for ti in preds}
        for gid, pid in matched_gt.items():
            if gid in last_match and last_match[gid] != pid:
                mme += 1
            last_match[gid] = pid
            frames_tracked[gid] = frames_tracked.get(gid, 0) + 1
            gm, pm = gmap[gid].mask, pmap[pid].instance.mask
            d_geo.append(geometric_center(gm).distance(geometric_center(pm)))
            d_bb.append(bbox_center(gm).distance(bbox_center(pm)))
        matches += len(matched_gt)
        fn += len(g.instances) - len(matched_gt)
        fp += len(preds) - len(matched_pr)
    mt = pt = ml = 0
    for gid, n in frames_seen.items():
        ratio = frames_tracked.get(gid, 0) / n
        if ratio >= 0.8:
            mt += 1
        elif ratio < 0.2:
            ml += 1
        else:
            pt += 1
    n_pred = matches + fp
    return MotReport(
        MOTP_bb=float(np.mean(d_bb)) if d_bb else float("nan"),
        MOTP_geo=float(np.mean(d_geo)) if d_geo else float("nan"),
        MOTA=1.0 - (fn + fp + mme) / n_gt,
        fn_ratio=fn / n_gt,
        fp_ratio=fp / n_gt,
        mme_ratio=mme / n_gt,
        GT=len(frames_seen),
        MT=mt,
        PT=pt,
        ML=ml,
        precision=matches / n_pred if n_pred else float("nan"),
        recall=matches / n_gt,
        counts={"fn": fn, "fp": fp, "mme": mme, "matches": matches, "gt": n_gt},
    )


def pool_mot(reports) -> MotReport:
    """Combine per-sequence reports by summing their counts.

    MOTP is the match-weighted mean of the sequence values; track tallies
    add up because track ids are local to a sequence.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to pool")
    c = {k: sum(r.counts[k] for r in reports) for k in ("fn", "fp", "mme", "matches", "gt")}
    w = np.array([r.counts["matches"] for r in reports], dtype=float)

    def motp(name):
        vals = np.array([getattr(r, name) for r in reports], dtype=float)
        keep = w > 0
        return float(np.dot(w[keep], vals[keep]) / w[keep].sum()) if keep.any() else float("nan")

    n_gt, n_pred = c["gt"], c["matches"] + c["fp"]
    return MotReport(
        MOTP_bb=motp("MOTP_bb"),
        MOTP_geo=motp("MOTP_geo"),
        MOTA=1.0 - (c["fn"] + c["fp"] + c["mme"]) / n_gt,
        fn_ratio=c["fn"] / n_gt,
        fp_ratio=c["fp"] / n_gt,
        mme_ratio=c["mme"] / n_gt,
        GT=sum(r.GT for r in reports),
        MT=sum(r.MT for r in reports),
        PT=sum(r.PT for r in reports),
        ML=sum(r.ML for r in reports),
        precision=c["matches"] / n_pred if n_pred else float("nan"),
        recall=c["matches"] / n_gt,
        counts=c,
    )


# --- threshold sweep and AP ---------------------------------------------------------------


@dataclass
class SweepCurve:
    mode: str
    thresholds: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "threshold": self.thresholds.tolist(),
            "fp": self.fp.tolist(),
            "fn": self.fn.tolist(),
        }

    def rows(self) -> list[dict]:
        return [
            {"threshold": float(t), "fp": int(a), "fn": int(b)}
            for t, a, b in zip(self.thresholds, self.fp, self.fn)
        ]


def sweep_thresholds(n: int = 30, lo: float = 0.01, hi: float = 0.98) -> np.ndarray:
    return np.linspace(lo, hi, n)


def _gt_key(a: IoUAssignment, key):
    return (key, a.frame, a.gt_track_id)


def fp_fn_at(assignments, values, n_gt: int, threshold: float, keys=None) -> tuple[int, int]:
    """False positives and false negatives after keeping ``values >= threshold``.

    ``n_gt`` is the number of ground-truth observations (instance-frames). A
    ground-truth observation counts as found when at least one kept
    prediction matches it with IoU >= 0.5. ``keys`` optionally distinguishes
    sequences when assignments of several sequences are pooled.
    """
    values = np.asarray(values, dtype=float)
    if len(values) != len(assignments):
        raise ValueError("need one filter value per prediction")
    keys = [None] * len(assignments) if keys is None else keys
    fp = 0
    found = set()
    for a, v, k in zip(assignments, values, keys):
        if v < threshold:
            continue
        if a.is_tp:
            found.add(_gt_key(a, k))
        else:
            fp += 1
    return fp, n_gt - len(found)


def threshold_sweep(assignments, values, n_gt: int, mode: str = "score", keys=None, thresholds=None) -> SweepCurve:
    th = sweep_thresholds() if thresholds is None else np.asarray(thresholds, dtype=float)
    if np.any(np.diff(th) <= 0):
        raise ValueError("sweep thresholds must increase strictly")
    counts = [fp_fn_at(assignments, values, n_gt, t, keys) for t in th]
    return SweepCurve(
        mode,
        th,
        np.array([c[0] for c in counts], dtype=int),
        np.array([c[1] for c in counts], dtype=int),
    )


def average_precision_50(assignments, scores, n_gt: int, keys=None) -> float:
    """Area under the all-point interpolated precision-recall curve at IoU 0.5.

    Predictions are ranked by descending score (stable for ties); a
    ground-truth observation can be claimed by one prediction only, later
    matches to it count as false positives. Accumulation uses exact
    fractions.
    """
    if n_gt < 1:
        raise ValueError("average precision needs at least one ground-truth instance")
    scores = np.asarray(scores, dtype=float)
    keys = [None] * len(assignments) if keys is None else keys
    order = np.argsort(-scores, kind="stable")
    claimed = set()
    tp = 0
    precisions, hit = [], []
    for rank, idx in enumerate(order, start=1):
        a = assignments[idx]
        key = _gt_key(a, keys[idx])
        ok = a.is_tp and key not in claimed
        if ok:
            claimed.add(key)
            tp += 1
        precisions.append(Fraction(tp, rank))
        hit.append(ok)
    ap = Fraction(0)
    best = Fraction(0)
    # walk backwards to build the precision envelope
    for p, ok in zip(reversed(precisions), reversed(hit)):
        best = max(best, p)
        if ok:
            ap += best
    return float(ap / n_gt)
