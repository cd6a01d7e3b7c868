"""Frame, sequence and ground-truth containers plus their on-disk formats.

Directory layout of one sequence::

    <seq_dir>/
      pred/frame_000001.png   16-bit instance-ID map, 0 = background
      pred/frame_000001.json  {"instances": [{"id": 1, "class": 1, "score": 0.93}, ...]}
      pred/frame_000001.prob  optional per-pixel class distribution (see below)
      gt/frame_000001.png     16-bit ID map, 0 = background, 65535 = ignore region
      gt/frame_000001.json    {"instances": [{"id": 1, "track_id": 17, "class": 1}, ...]}

``.prob`` files are little-endian: the 4-byte magic ``b"TMPB"``, then ``H``,
``W`` and ``C`` as uint32, then ``H*W*C`` float32 values, pixel-major (all
classes of pixel (0, 0) first). Channel 0 is background, channel ``c`` is
class ``c``.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence as Seq

import numpy as np
from PIL import Image

from .geometry import FrameDims, PixelMask, intersection_size

__all__ = [
    "Instance",
    "Frame",
    "Sequence",
    "GTInstance",
    "GroundTruthFrame",
    "DataFormatError",
    "IGNORE_ID",
    "PROB_MAGIC",
    "load_sequence",
    "save_sequence",
    "filter_ignored",
    "filter_score",
    "write_features",
    "read_features",
    "write_report",
    "read_report",
    "write_prob",
    "read_prob",
]

IGNORE_ID = 65535
PROB_MAGIC = b"TMPB"
PROB_TOL = 1e-6
_FRAME_RE = re.compile(r"^frame_(\d{6})\.(png|json|prob)$")


class DataFormatError(ValueError):
    """Malformed sequence directory or file.

    ``frame`` carries the offending frame index when known.
    """

    def __init__(self, message: str, frame: int | None = None):
        super().__init__(message if frame is None else f"frame {frame}: {message}")
        self.frame = frame


@dataclass(frozen=True)
class Instance:
    local_id: int
    class_label: int
    score: float
    mask: PixelMask

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"instance {self.local_id}: score {self.score} outside [0, 1]")
        if not self.mask:
            raise ValueError(f"instance {self.local_id}: empty mask")


@dataclass
class Frame:
    index: int
    dims: FrameDims
    instances: list[Instance]
    prob_map: np.ndarray | None = None  # (H, W, C) float32

    def __post_init__(self):
        ids = [i.local_id for i in self.instances]
        if len(set(ids)) != len(ids):
            raise DataFormatError("duplicate local instance ids", self.index)
        for inst in self.instances:
            if inst.mask.dims != self.dims:
                raise DataFormatError(f"instance {inst.local_id} has dims {inst.mask.dims}", self.index)

    @property
    def n_classes(self) -> int | None:
        """Number of channels in the probability map (background included)."""
        return None if self.prob_map is None else self.prob_map.shape[2]

    def by_id(self, local_id: int) -> Instance:
        for inst in self.instances:
            if inst.local_id == local_id:
                return inst
        raise KeyError(local_id)


@dataclass(frozen=True)
class GTInstance:
    track_id: int
    class_label: int
    mask: PixelMask


@dataclass
class GroundTruthFrame:
    index: int
    instances: list[GTInstance]
    ignore_mask: PixelMask | None = None

    def __post_init__(self):
        ids = [g.track_id for g in self.instances]
        if len(set(ids)) != len(ids):
            raise DataFormatError("duplicate ground-truth track ids", self.index)


@dataclass
class Sequence:
    id: str
    frames: list[Frame]
    gt: list[GroundTruthFrame] | None = None

    def __post_init__(self):
        if not self.frames:
            raise DataFormatError(f"sequence {self.id!r} has no frames")
        for k, fr in enumerate(self.frames, start=1):
            if fr.index != k:
                raise DataFormatError(f"expected frame index {k}, found {fr.index}", k)
            if fr.dims != self.frames[0].dims:
                raise DataFormatError(f"dims {fr.dims} differ from {self.frames[0].dims}", fr.index)
        if self.gt is not None:
            if [g.index for g in self.gt] != [f.index for f in self.frames]:
                raise DataFormatError(f"sequence {self.id!r}: ground truth frames do not align")

    @property
    def dims(self) -> FrameDims:
        return self.frames[0].dims

    def __len__(self) -> int:
        return len(self.frames)


# --- filtering ----------------------------------------------------------------


def filter_ignored(frame: Frame, gt: GroundTruthFrame | None, threshold: float = 0.8) -> Frame:
    """Drop predictions with at least ``threshold`` of their pixels in the ignore region."""
    if gt is None or gt.ignore_mask is None or not gt.ignore_mask:
        return frame
    if gt.index != frame.index:
        raise ValueError(f"frame {frame.index} paired with ground truth {gt.index}")
    kept = [
        inst
        for inst in frame.instances
        if intersection_size(inst.mask, gt.ignore_mask) / inst.mask.size < threshold
    ]
    return replace(frame, instances=kept)


def filter_score(frame: Frame, threshold: float) -> Frame:
    if threshold <= 0:
        return frame
    return replace(frame, instances=[i for i in frame.instances if i.score >= threshold])


# --- id maps and probability files -------------------------------------------------


def _read_id_map(path: Path, frame: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.array(im)
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"cannot read id map {path}: {exc}", frame) from exc
    if arr.ndim != 2:
        raise DataFormatError(f"id map {path} is not single-channel", frame)
    return arr.astype(np.int64)


def _write_id_map(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint16)).save(path)


def _masks_from_id_map(id_map: np.ndarray) -> dict[int, PixelMask]:
    out = {}
    for v in np.unique(id_map):
        if v == 0:
            continue
        out[int(v)] = PixelMask.from_dense(id_map == v)
    return out


def _id_map_from_masks(dims: FrameDims, masks: Mapping[int, PixelMask]) -> np.ndarray:
    out = np.zeros(dims.shape, dtype=np.uint16)
    for k, m in masks.items():
        d = m.to_dense()
        if (out[d] != 0).any():
            raise DataFormatError(f"masks overlap at id {k}; id maps cannot store overlapping instances")
        out[d] = k
    return out


def write_prob(path: Path, prob: np.ndarray) -> None:
    p = np.ascontiguousarray(prob, dtype="<f4")
    h, w, c = p.shape
    with open(path, "wb") as f:
        f.write(PROB_MAGIC)
        f.write(np.array([h, w, c], dtype="<u4").tobytes())
        f.write(p.tobytes())


def read_prob(path: Path, frame: int | None = None) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != PROB_MAGIC or len(raw) < 16:
        raise DataFormatError(f"{path} is not a probability file", frame)
    h, w, c = (int(v) for v in np.frombuffer(raw, dtype="<u4", count=3, offset=4))
    if len(raw) != 16 + 4 * h * w * c:
        raise DataFormatError(f"{path}: expected {h}x{w}x{c} floats", frame)
    prob = np.frombuffer(raw, dtype="<f4", offset=16).reshape(h, w, c).astype(np.float32)
    _validate_prob(prob, frame)
    return prob


def _validate_prob(prob: np.ndarray, frame: int | None) -> None:
    if not np.all(np.isfinite(prob)) or (prob < 0).any():
        r, c = np.argwhere(~np.isfinite(prob) | (prob < 0))[0][:2]
        raise DataFormatError(f"pixel ({r}, {c}) has negative or non-finite probability", frame)
    err = np.abs(prob.astype(np.float64).sum(axis=2) - 1.0)
    if (err > PROB_TOL).any():
        r, c = np.argwhere(err > PROB_TOL)[0]
        total = prob[r, c].astype(np.float64).sum()
        raise DataFormatError(f"pixel ({r}, {c}) probabilities sum to {total:.6g}", frame)


def _scan(directory: Path) -> dict[int, set[str]]:
    found: dict[int, set[str]] = {}
    if not directory.is_dir():
        return found
    for p in directory.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            found.setdefault(int(m.group(1)), set()).add(m.group(2))
    return found


def _frame_stem(t: int) -> str:
    return f"frame_{t:06d}"


def _check_indices(found: dict[int, set[str]], where: str) -> int:
    if not found:
        raise DataFormatError(f"no frames found in {where}")
    T = max(found)
    for t in range(1, T + 1):
        kinds = found.get(t, set())
        for need in ("png", "json"):
            if need not in kinds:
                what = "id-map" if need == "png" else "json"
                raise DataFormatError(f"missing {what} file in {where}", t)
    return T


def _load_json(path: Path, frame: int) -> dict:
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot parse {path}: {exc}", frame) from exc


def load_sequence(directory, *, load_gt: bool = True) -> Sequence:
    """Load and validate a sequence directory.

    Ground truth is attached as ``Sequence.gt`` when a ``gt/`` subdirectory
    exists and ``load_gt`` is true.
    """
    root = Path(directory)
    pred_dir = root / "pred"
    found = _scan(pred_dir)
    T = _check_indices(found, str(pred_dir))
    frames = []
    dims0 = None
    for t in range(1, T + 1):
        stem = pred_dir / _frame_stem(t)
        id_map = _read_id_map(stem.with_suffix(".png"), t)
        dims = FrameDims(*id_map.shape)
        if dims0 is None:
            dims0 = dims
        elif dims != dims0:
            raise DataFormatError(f"dims {dims.height}x{dims.width} differ from frame 1", t)
        meta = _load_json(stem.with_suffix(".json"), t)
        masks = _masks_from_id_map(id_map)
        instances = []
        for rec in meta.get("instances", []):
            k = int(rec["id"])
            if k not in masks:
                raise DataFormatError(f"instance id {k} listed but absent from id map", t)
            try:
                instances.append(Instance(k, int(rec["class"]), float(rec["score"]), masks.pop(k)))
            except ValueError as exc:
                raise DataFormatError(str(exc), t) from exc
        if masks:
            raise DataFormatError(f"id map contains unlisted ids {sorted(masks)}", t)
        prob = None
        if "prob" in found[t]:
            prob = read_prob(stem.with_suffix(".prob"), t)
            if prob.shape[:2] != dims.shape:
                raise DataFormatError(f"probability map shape {prob.shape[:2]} differs from id map", t)
        frames.append(Frame(t, dims, instances, prob))

    gt = None
    gt_dir = root / "gt"
    if load_gt and gt_dir.is_dir():
        gfound = _scan(gt_dir)
        GT = _check_indices(gfound, str(gt_dir))
        if GT != T:
            raise DataFormatError(f"ground truth has {GT} frames, predictions have {T}")
        gt = []
        for t in range(1, T + 1):
            stem = gt_dir / _frame_stem(t)
            id_map = _read_id_map(stem.with_suffix(".png"), t)
            if id_map.shape != dims0.shape:
                raise DataFormatError("ground-truth dims differ from predictions", t)
            meta = _load_json(stem.with_suffix(".json"), t)
            ignore = id_map == IGNORE_ID
            id_map[ignore] = 0
            masks = _masks_from_id_map(id_map)
            ginst = []
            for rec in meta.get("instances", []):
                k = int(rec["id"])
                if k not in masks:
                    raise DataFormatError(f"ground-truth id {k} absent from id map", t)
                ginst.append(GTInstance(int(rec["track_id"]), int(rec["class"]), masks.pop(k)))
            if masks:
                raise DataFormatError(f"ground-truth id map contains unlisted ids {sorted(masks)}", t)
            ig = PixelMask.from_dense(ignore) if ignore.any() else None
            gt.append(GroundTruthFrame(t, ginst, ig))
    return Sequence(root.name, frames, gt)


def save_sequence(seq: Sequence, directory) -> Path:
    """Write ``seq`` (and its ground truth, if any) in the layout above."""
    root = Path(directory)
    pred_dir = root / "pred"
    pred_dir.mkdir(parents=True, exist_ok=True)
    for fr in seq.frames:
        stem = pred_dir / _frame_stem(fr.index)
        masks = {i.local_id: i.mask for i in fr.instances}
        _write_id_map(stem.with_suffix(".png"), _id_map_from_masks(fr.dims, masks))
        meta = {
            "instances": [
                {"id": i.local_id, "class": i.class_label, "score": i.score} for i in fr.instances
            ]
        }
        stem.with_suffix(".json").write_text(json.dumps(meta, indent=1))
        if fr.prob_map is not None:
            write_prob(stem.with_suffix(".prob"), fr.prob_map)
    if seq.gt is not None:
        gt_dir = root / "gt"
        gt_dir.mkdir(parents=True, exist_ok=True)
        for g in seq.gt:
            stem = gt_dir / _frame_stem(g.index)
            masks = {k: gi.mask for k, gi in enumerate(g.instances, start=1)}
            id_map = _id_map_from_masks(seq.dims, masks)
            if g.ignore_mask is not None:
                id_map[g.ignore_mask.to_dense() & (id_map == 0)] = IGNORE_ID
            _write_id_map(stem.with_suffix(".png"), id_map)
            meta = {
                "instances": [
                    {"id": k, "track_id": gi.track_id, "class": gi.class_label}
                    for k, gi in enumerate(g.instances, start=1)
                ]
            }
            stem.with_suffix(".json").write_text(json.dumps(meta, indent=1))
    return root


# --- tables and reports -----------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse(s: str):
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def write_features(records: Seq[Mapping], path) -> Path:
    """Write records as CSV; column order follows the first record.

    Floats are written with ``repr`` so re-reading is bit-exact.
    """
    if not records:
        raise ValueError("refusing to write an empty record set")
    columns = list(records[0].keys())
    path = Path(path)
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(columns)
            for k, rec in enumerate(records):
                if list(rec.keys()) != columns:
                    raise ValueError(f"record {k} has columns differing from the header")
                w.writerow([_fmt(rec[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write features to {path}: {exc}") from exc
    return path


def read_features(path) -> list[dict]:
    path = Path(path)
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            return [dict(zip(header, (_parse(v) for v in row))) for row in reader]
    except OSError as exc:
        raise OSError(f"cannot read features from {path}: {exc}") from exc


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_report(report: Mapping, path) -> Path:
    """Serialise a report dict as JSON. Non-finite floats become ``null``."""
    path = Path(path)
    text = json.dumps(_jsonable(report), indent=2, allow_nan=False) + "\n"
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())
