"""Building blocks shared by the command line and the pipeline runner.

Each function turns one stage's inputs into its outputs in memory; the
serialisation helpers convert to and from the on-disk formats.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .dataio import Sequence, filter_ignored, filter_score
from .evaluation import assign_iou, average_precision_50, mot_evaluate, pearson, pool_mot, threshold_sweep
from .features import (
    InstanceMetrics,
    add_survival_metric,
    assemble_timeseries,
    compute_metrics,
    gt_class_ratios,
    rows_from_records,
    rows_to_records,
)
from .meta.dataset import MetaDataset
from .meta.protocol import ProtocolError, crossfit_probabilities
from .survival import CoxModel, build_survival_records, covariate_base_names, fit_cox
from .tracker import TrackedInstance, TrackHistory, TrackingParams, track_sequence

SURVIVAL_WINDOW = 5


def prepare(seq: Sequence, score_threshold: float = 0.0) -> Sequence:
    """Drop predictions inside ignored regions and below the score threshold."""
    gts = seq.gt if seq.gt is not None else [None] * len(seq.frames)
    frames = [filter_score(filter_ignored(fr, g), score_threshold) for fr, g in zip(seq.frames, gts)]
    return replace(seq, frames=frames)


# --- tracking --------------------------------------------------------------


def tracks_to_dict(seq: Sequence, tracked, params: TrackingParams, seed) -> dict:
    return {
        "sequence": seq.id,
        "params": {"c_o": params.c_o, "c_d": params.c_d, "c_l": params.c_l, "t_l": params.t_l},
        "seed": seed,
        "frames": {
            str(fr.index): [[ti.instance.local_id, ti.track_id] for ti in tr]
            for fr, tr in zip(seq.frames, tracked)
        },
    }


def tracks_from_dict(seq: Sequence, d: dict):
    """Rebuild the tracking output and history of ``seq`` from its JSON form."""
    frames = d["frames"]
    tracked, history = [], TrackHistory()
    for fr in seq.frames:
        pairs = frames.get(str(fr.index))
        if pairs is None:
            raise ValueError(f"tracks have no entry for frame {fr.index} of sequence {seq.id!r}")
        ids = {int(lid): int(tid) for lid, tid in pairs}
        missing = sorted({i.local_id for i in fr.instances} - set(ids))
        if missing:
            raise ValueError(f"frame {fr.index}: instances {missing} have no track id")
        row = [TrackedInstance(fr.by_id(lid), tid) for lid, tid in sorted(ids.items())]
        for ti in row:
            history.add(ti.track_id, fr.index, ti.instance)
        tracked.append(row)
    return tracked, history


def run_tracking(seq: Sequence, params: TrackingParams | None = None, seed=0):
    return track_sequence(seq, params or TrackingParams(), seed=seed, return_history=True)


# --- metrics -----------------------------------------------------------------


def ratios_from(seqs) -> dict[int, float]:
    gts = []
    for s in seqs:
        if s.gt is None:
            raise ValueError(f"sequence {s.id!r} has no ground truth for class ratios")
        gts.extend(s.gt)
    return gt_class_ratios(gts)


def metrics_for(seq, tracked, history, ratios=None, cox: CoxModel | None = None) -> list[InstanceMetrics]:
    m = compute_metrics(seq, tracked, history, ratios=ratios)
    if cox is not None:
        m = add_survival_metric(m, cox)
    return m


def _fit_cox_rows(rows_by_seq) -> CoxModel:
    records, base = [], None
    for seq, rows in rows_by_seq:
        if not rows:
            continue
        base = covariate_base_names(rows[0].names) if base is None else base
        records.extend(build_survival_records(rows, seq, SURVIVAL_WINDOW, base))
    return fit_cox(records, base_names=base or (), window=SURVIVAL_WINDOW)


def fit_survival(tracked_seqs, ratios=None) -> CoxModel:
    """Fit the Cox model on ``(seq, tracked, history)`` triples with ground truth."""
    pairs = []
    for seq, tracked, history in tracked_seqs:
        m = compute_metrics(seq, tracked, history, ratios=ratios)
        pairs.append((seq, assemble_timeseries(m, SURVIVAL_WINDOW) if m else []))
    return _fit_cox_rows(pairs)


def fit_survival_from_records(records, seqs) -> CoxModel:
    """Fit the Cox model on a feature table (``n_c >= 5``) and the matching sequences."""
    rows = rows_from_records(records)
    by_id = {s.id: s for s in seqs}
    unknown = sorted({r.sequence for r in rows} - set(by_id))
    if unknown:
        raise ValueError(f"feature rows reference sequences without ground truth input: {unknown}")
    return _fit_cox_rows([(seq, [r for r in rows if r.sequence == sid]) for sid, seq in by_id.items()])


def feature_records(metrics: list[InstanceMetrics], n_c: int) -> list[dict]:
    return rows_to_records(assemble_timeseries(metrics, n_c))


def targets_for(seq: Sequence) -> list[dict]:
    if seq.gt is None:
        raise ValueError(f"sequence {seq.id!r} has no ground truth")
    out = []
    for fr, g in zip(seq.frames, seq.gt):
        for a in assign_iou(fr, g):
            out.append({
                "sequence": seq.id,
                "frame": a.frame,
                "local_id": a.local_id,
                "gt_track_id": -1 if a.gt_track_id is None else a.gt_track_id,
                "iou": a.iou,
            })
    return out


def dataset_from(records, targets) -> MetaDataset:
    return MetaDataset.from_records(records, targets)


def gt_count(seqs) -> int:
    return sum(len(g.instances) for s in seqs for g in s.gt)


def assignments_with_keys(seqs):
    """IoU assignments of all predictions plus a parallel list of sequence ids."""
    asg, keys = [], []
    for s in seqs:
        for fr, g in zip(s.frames, s.gt):
            a = assign_iou(fr, g)
            asg.extend(a)
            keys.extend([s.id] * len(a))
    return asg, keys


def align(values_by_key: dict, asg, keys) -> np.ndarray:
    """Order per-prediction values ``{(sequence, frame, local_id): v}`` like ``asg``."""
    return np.array([values_by_key[(k, a.frame, a.local_id)] for a, k in zip(asg, keys)], dtype=float)


def load_targets(records) -> list[dict]:
    """Normalise target rows read back from CSV."""
    return [
        {"sequence": str(r["sequence"]), "frame": int(r["frame"]), "local_id": int(r["local_id"]),
         "gt_track_id": int(r["gt_track_id"]), "iou": float(r["iou"])}
        for r in records
    ]


# --- evaluation ---------------------------------------------------------------


def mot_reports(tracked_seqs) -> dict:
    """Per-sequence and pooled CLEAR-MOT reports of ``(seq, tracked)`` pairs."""
    per = {}
    for seq, tracked in tracked_seqs:
        if seq.gt is None:
            raise ValueError(f"sequence {seq.id!r} has no ground truth for MOT evaluation")
        per[seq.id] = mot_evaluate(tracked, seq.gt)
    return {
        "per_sequence": {k: r.as_dict() for k, r in per.items()},
        "pooled": pool_mot(per.values()).as_dict(),
    }


def correlation_table(ds: MetaDataset) -> dict:
    """Pearson correlation of each frame-t metric with the IoU; None for constant columns."""
    out = {}
    for m in ds.metrics:
        col = ds.X[:, ds.feature_names.index(f"{m}_0")]
        try:
            out[m] = pearson(col, ds.target_iou)
        except ValueError:
            out[m] = None
    return out


def score_values(seqs) -> dict:
    return {(s.id, fr.index, i.local_id): i.score for s in seqs for fr in s.frames for i in fr.instances}


def sweep_report(seqs, ds: MetaDataset | None = None, family: str = "gb", seed: int = 0) -> dict:
    """FP/FN sweeps over the detection score and over cross-fitted meta probabilities.

    ``seqs`` are the prepared sequences with ground truth; ``ds`` must hold
    one row per prediction of ``seqs``. Without ``ds`` only the score curve
    is produced.
    """
    asg, keys = assignments_with_keys(seqs)
    n_gt = gt_count(seqs)
    score = align(score_values(seqs), asg, keys)
    curves = {"score": threshold_sweep(asg, score, n_gt, "score", keys)}
    ap = {"score": average_precision_50(asg, score, n_gt, keys)}
    out = {"n_predictions": len(asg), "n_gt": n_gt, "family": family, "seed": seed}
    if ds is not None:
        try:
            prob = crossfit_probabilities(ds, family=family, seed=seed)
        except ProtocolError as exc:
            out["meta_error"] = str(exc)
        else:
            meta = align({(k[0], k[2], k[3]): p for k, p in zip(ds.keys, prob)}, asg, keys)
            curves["meta"] = threshold_sweep(asg, meta, n_gt, "meta", keys)
            ap["meta"] = average_precision_50(asg, meta, n_gt, keys)
    out["curves"] = {k: c.as_dict() for k, c in curves.items()}
    out["ap50"] = ap
    return out
