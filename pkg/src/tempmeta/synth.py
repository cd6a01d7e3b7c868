"""Seeded synthetic videos with ground truth and degraded predictions.

Objects are rectangles or ellipses moving at constant velocity. Ground truth
masks are rendered back to front, so nearer objects (larger ``depth``) hide
farther ones. Predictions copy the ground truth objects with per-frame
position, size and boundary noise, occasional omissions (flicker) and
short-lived clutter detections placed away from every object. Scores are a
noisy increasing function of the true IoU of each prediction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import naive
from .dataio import Frame, GroundTruthFrame, GTInstance, Instance, Sequence
from .geometry import FrameDims, PixelMask, _runs_from_dense, intersection_size

SHAPES = ("rect", "ellipse")


class SynthConfigError(ValueError):
    pass


@dataclass
class ObjectSpec:
    """Kinematics of one object. ``start`` is the centre at ``birth``."""

    size: tuple[float, float]
    start: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    shape: str = "rect"
    class_label: int = 1
    birth: int = 1
    death: int | None = None
    flicker: tuple[int, ...] = ()
    depth: float = 0.0

    def center(self, t: int) -> tuple[float, float]:
        k = t - self.birth
        return self.start[0] + self.velocity[0] * k, self.start[1] + self.velocity[1] * k


@dataclass
class Degradation:
    """Noise applied to predictions; all zeros reproduces the ground truth.

    ``pos_noise`` and ``size_noise`` are relative to the object extent; each
    object draws a persistent quality factor ``exp(N(0, quality_spread))``
    that multiplies both. ``mask_noise`` is the probability of flipping a
    pixel on either side of the mask boundary. Clutter detections appear at
    rate ``fp_rate`` per frame and live ``fp_life`` frames on average.
    Probability maps get Gaussian logit noise of standard deviation
    ``softness``.
    """

    pos_noise: float = 0.0
    size_noise: float = 0.0
    mask_noise: float = 0.0
    quality_spread: float = 0.0
    flicker_prob: float = 0.0
    fp_rate: float = 0.0
    fp_life: float = 2.0
    fp_size: tuple[float, float] = (6.0, 16.0)
    fp_jitter: float = 3.0
    fp_min_distance: float = 10.0
    score_gain: float = 10.0
    score_offset: float = 0.5
    score_noise: float = 0.0
    fp_score_mean: float = -2.0
    softness: float = 0.0
    confidence: float = 4.0


@dataclass
class SynthConfig:
    height: int
    width: int
    n_frames: int
    objects: list = field(default_factory=list)
    n_random_objects: int = 0
    size_range: tuple[float, float] = (10.0, 40.0)
    max_speed: float = 3.0
    random_lifetimes: bool = False
    n_classes: int = 3
    prob_maps: bool = True
    degradation: Degradation = field(default_factory=Degradation)
    seed: int = 0
    name: str = "synth"

    @property
    def dims(self) -> FrameDims:
        return FrameDims(self.height, self.width)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise SynthConfigError(f"unknown synth config keys: {extra}")
        deg = d.pop("degradation", {}) or {}
        if isinstance(deg, dict):
            bad = sorted(set(deg) - {f.name for f in fields(Degradation)})
            if bad:
                raise SynthConfigError(f"unknown degradation keys: {bad}")
            deg = Degradation(**{k: tuple(v) if isinstance(v, list) else v for k, v in deg.items()})
        objs = []
        for o in d.pop("objects", []) or []:
            if isinstance(o, ObjectSpec):
                objs.append(o)
                continue
            o = {k: tuple(v) if isinstance(v, list) else v for k, v in o.items()}
            objs.append(ObjectSpec(**o))
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(objects=objs, degradation=deg, **d)


# --- rasterisation ---------------------------------------------------------


def _shape_crop(shape: str, center, size):
    """Boolean crop and its top-left corner (may lie outside the frame)."""
    cv, ch = center
    h, w = size
    if shape == "rect":
        hh, ww = max(1, int(round(h))), max(1, int(round(w)))
        r0 = int(np.floor(cv - hh / 2 + 0.5))
        c0 = int(np.floor(ch - ww / 2 + 0.5))
        return r0, c0, np.ones((hh, ww), dtype=bool)
    if shape == "ellipse":
        a, b = max(h / 2, 0.5), max(w / 2, 0.5)
        r0, r1 = int(np.ceil(cv - a)), int(np.floor(cv + a))
        c0, c1 = int(np.ceil(ch - b)), int(np.floor(ch + b))
        rr = np.arange(r0, r1 + 1)[:, None]
        cc = np.arange(c0, c1 + 1)[None, :]
        crop = ((rr - cv) / a) ** 2 + ((cc - ch) / b) ** 2 <= 1.0
        if not crop.any():
            crop = np.zeros((1, 1), dtype=bool)
            crop[0, 0] = True
            r0, c0 = int(round(cv)), int(round(ch))
        return r0, c0, crop
    raise SynthConfigError(f"unknown shape {shape!r}; expected one of {SHAPES}")


def _inside(r0, c0, crop, dims: FrameDims) -> bool:
    rows, cols = np.nonzero(crop)
    if len(rows) == 0:
        return False
    return r0 + rows.min() >= 0 and c0 + cols.min() >= 0 and r0 + rows.max() < dims.height and c0 + cols.max() < dims.width


def _paint(canvas, r0, c0, crop, label):
    H, W = canvas.shape
    a0, b0 = max(r0, 0), max(c0, 0)
    a1, b1 = min(r0 + crop.shape[0], H), min(c0 + crop.shape[1], W)
    if a0 >= a1 or b0 >= b1:
        return None
    sub = crop[a0 - r0 : a1 - r0, b0 - c0 : b1 - c0]
    canvas[a0:a1, b0:b1][sub] = label
    return a0, a1, b0, b1


def _masks_from_canvas(canvas, boxes: dict, dims: FrameDims) -> dict:
    out = {}
    for label, (a0, a1, b0, b1) in boxes.items():
        sub = canvas[a0:a1, b0:b1] == label
        if not sub.any():
            continue
        runs = _runs_from_dense(sub)
        runs[:, 0] += a0
        runs[:, 1] += b0
        out[label] = PixelMask(dims, runs)
    return out


def _boundary_noise(crop, p, rng):
    """Flip pixels just inside and just outside the boundary with probability ``p``."""
    pad = np.pad(crop, 2)
    grown = pad.copy()
    shrunk = pad.copy()
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            s = np.roll(np.roll(pad, dr, 0), dc, 1)
            grown |= s
            shrunk &= s
    inner_ring = pad & ~shrunk
    outer_ring = grown & ~pad
    flip = rng.random(pad.shape) < p
    out = (pad & ~(inner_ring & flip)) | (outer_ring & flip)
    if not out.any():
        out = pad
    return out


# --- generation ------------------------------------------------------------


def _random_objects(cfg: SynthConfig, rng) -> list[ObjectSpec]:
    dims, T = cfg.dims, cfg.n_frames
    objs = []
    lo, hi = cfg.size_range
    n_fg = max(cfg.n_classes - 1, 1)
    for k in range(cfg.n_random_objects):
        for _ in range(200):
            h, w = rng.uniform(lo, hi, size=2)
            vel = rng.uniform(-cfg.max_speed, cfg.max_speed, size=2)
            if cfg.random_lifetimes:
                birth = int(rng.integers(1, max(2, T // 3) + 1))
                death = int(rng.integers(min(T, max(birth + 1, 2 * T // 3)), T + 1))
            else:
                birth, death = 1, T
            span = death - birth
            # feasible start centres so the full shape stays in frame
            lo_v = h / 2 + 1 - min(0.0, vel[0] * span)
            hi_v = dims.height - h / 2 - 2 - max(0.0, vel[0] * span)
            lo_h = w / 2 + 1 - min(0.0, vel[1] * span)
            hi_h = dims.width - w / 2 - 2 - max(0.0, vel[1] * span)
            if lo_v >= hi_v or lo_h >= hi_h:
                continue
            start = (float(rng.uniform(lo_v, hi_v)), float(rng.uniform(lo_h, hi_h)))
            obj = ObjectSpec(
                size=(float(h), float(w)),
                start=start,
                velocity=(float(vel[0]), float(vel[1])),
                shape=SHAPES[int(rng.integers(len(SHAPES)))],
                class_label=int(rng.integers(1, n_fg + 1)),
                birth=birth,
                death=death,
                depth=float(rng.random()),
            )
            if all(_inside(*_shape_crop(obj.shape, obj.center(t), obj.size), dims) for t in (birth, death)):
                objs.append(obj)
                break
        else:
            raise SynthConfigError(f"could not place random object {k} inside a {dims.height}x{dims.width} frame")
    return objs


def validate(cfg: SynthConfig, objects: list[ObjectSpec]) -> None:
    dims = cfg.dims
    if cfg.n_frames < 1:
        raise SynthConfigError("n_frames must be positive")
    if cfg.prob_maps and cfg.n_classes < 2:
        raise SynthConfigError("probability maps need at least two classes (background plus one)")
    for k, o in enumerate(objects):
        death = cfg.n_frames if o.death is None else o.death
        if not 1 <= o.birth <= death <= cfg.n_frames:
            raise SynthConfigError(f"object {k}: lifetime [{o.birth}, {death}] outside 1..{cfg.n_frames}")
        if o.class_label < 1 or (cfg.prob_maps and o.class_label >= cfg.n_classes):
            raise SynthConfigError(f"object {k}: class {o.class_label} invalid for {cfg.n_classes} classes")
        for t in range(o.birth, death + 1):
            if not _inside(*_shape_crop(o.shape, o.center(t), o.size), dims):
                raise SynthConfigError(f"object {k} leaves the frame at frame {t}")


def _score(iou, deg: Degradation, rng) -> float:
    z = deg.score_gain * (iou - deg.score_offset)
    if deg.score_noise > 0:
        z += rng.normal(0.0, deg.score_noise)
    return float(1.0 / (1.0 + np.exp(-z)))


def _prob_map(dims, n_classes, preds, gts, deg: Degradation, rng):
    """Per-pixel class probabilities: confident where prediction and ground
    truth agree, uncertain where they disagree."""
    H, W = dims.shape
    logits = np.zeros((H, W, n_classes))
    conf = deg.confidence
    gt_dense = {}
    for gi in gts:
        gt_dense[gi.track_id] = gi.mask
    for inst, src in preds:
        rows, cols = inst.mask.pixels()
        agree = np.zeros(len(rows), dtype=bool)
        if src is not None and src in gt_dense:
            g = gt_dense[src].to_dense()
            agree = g[rows, cols]
        logits[rows, cols, inst.class_label] += np.where(agree, conf, 0.5)
    for gi in gts:
        rows, cols = gi.mask.pixels()
        logits[rows, cols, gi.class_label] += 0.5
    if deg.softness > 0:
        logits += rng.normal(0.0, deg.softness, size=logits.shape)
    logits -= logits.max(axis=2, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=2, keepdims=True)
    return p


def generate(cfg: SynthConfig) -> tuple[Sequence, list[GroundTruthFrame]]:
    """Render the configured sequence.

    Returns
    -------
    seq : Sequence
        Degraded predictions (with probability maps when enabled) and the
        ground truth attached as ``seq.gt``.
    gt : list of GroundTruthFrame
    """
    rng = np.random.default_rng(cfg.seed)
    objects = list(cfg.objects) + _random_objects(cfg, rng)
    validate(cfg, objects)
    deg = cfg.degradation
    dims = cfg.dims
    T = cfg.n_frames
    quality = np.exp(rng.normal(0.0, deg.quality_spread, size=len(objects))) if deg.quality_spread > 0 else np.ones(len(objects))
    order = sorted(range(len(objects)), key=lambda k: (objects[k].depth, k))
    n_fg = max(cfg.n_classes - 1, 1)
    clutter = []  # dicts: center, size, class, last frame, shape
    frames, gt_frames = [], []
    gt_canvas = np.zeros(dims.shape, dtype=np.int32)
    pr_canvas = np.zeros(dims.shape, dtype=np.int32)
    for t in range(1, T + 1):
        gt_canvas[:] = 0
        boxes = {}
        alive = []
        for k in order:
            o = objects[k]
            death = T if o.death is None else o.death
            if not o.birth <= t <= death:
                continue
            alive.append(k)
            box = _paint(gt_canvas, *_shape_crop(o.shape, o.center(t), o.size), k + 1)
            boxes[k + 1] = box
        gt_masks = _masks_from_canvas(gt_canvas, boxes, dims)
        gts = [GTInstance(k + 1, objects[k].class_label, gt_masks[k + 1]) for k in sorted(alive) if k + 1 in gt_masks]
        gt_frames.append(GroundTruthFrame(t, gts))

        # predictions of real objects, painted in the same depth order
        pr_canvas[:] = 0
        pboxes, source, label = {}, {}, 0
        for k in order:
            if k + 1 not in gt_masks:
                continue
            o = objects[k]
            if t in o.flicker or (deg.flicker_prob > 0 and rng.random() < deg.flicker_prob):
                continue
            cv, ch = o.center(t)
            h, w = o.size
            q = quality[k]
            if deg.pos_noise > 0:
                cv += rng.normal(0.0, deg.pos_noise * q) * h
                ch += rng.normal(0.0, deg.pos_noise * q) * w
            if deg.size_noise > 0:
                s = np.exp(rng.normal(0.0, deg.size_noise * q, size=2))
                h, w = h * s[0], w * s[1]
            r0, c0, crop = _shape_crop(o.shape, (cv, ch), (h, w))
            if deg.mask_noise > 0:
                crop = _boundary_noise(crop, deg.mask_noise * q, rng)
                r0, c0 = r0 - 2, c0 - 2
            label += 1
            box = _paint(pr_canvas, r0, c0, crop, label)
            if box is not None:
                pboxes[label] = box
                source[label] = k + 1

        # clutter: spawn, move, and keep only where it stays clear of objects
        if deg.fp_rate > 0:
            for _ in range(rng.poisson(deg.fp_rate)):
                sz = rng.uniform(*deg.fp_size, size=2)
                clutter.append({
                    "center": rng.uniform([0, 0], dims.shape),
                    "size": sz,
                    "class": int(rng.integers(1, n_fg + 1)),
                    "until": t + int(rng.geometric(1.0 / max(deg.fp_life, 1.0))) - 1,
                    "shape": SHAPES[int(rng.integers(len(SHAPES)))],
                })
        clutter = [c for c in clutter if c["until"] >= t]
        fp_labels = {}
        occupied = gt_canvas > 0
        for c in clutter:
            c["center"] = c["center"] + rng.normal(0.0, deg.fp_jitter, size=2)
            r0, c0, crop = _shape_crop(c["shape"], tuple(c["center"]), tuple(c["size"]))
            m = int(np.ceil(deg.fp_min_distance))
            a0, a1 = max(r0 - m, 0), min(r0 + crop.shape[0] + m, dims.height)
            b0, b1 = max(c0 - m, 0), min(c0 + crop.shape[1] + m, dims.width)
            if a0 >= a1 or b0 >= b1 or occupied[a0:a1, b0:b1].any() or (pr_canvas[a0:a1, b0:b1] > 0).any():
                continue
            label += 1
            box = _paint(pr_canvas, r0, c0, crop, label)
            if box is not None:
                pboxes[label] = box
                fp_labels[label] = c["class"]
        pmasks = _masks_from_canvas(pr_canvas, pboxes, dims)

        instances, with_src = [], []
        gt_by_id = {g.track_id: g for g in gts}
        for lab in sorted(pmasks):
            m = pmasks[lab]
            src = source.get(lab)
            if src is not None:
                g = gt_by_id[src].mask
                inter = intersection_size(m, g)
                iou = inter / (m.size + g.size - inter)
                cls = objects[src - 1].class_label
                score = _score(iou, deg, rng)
            else:
                cls = fp_labels[lab]
                z = deg.fp_score_mean + (rng.normal(0.0, deg.score_noise) if deg.score_noise > 0 else 0.0)
                score = float(1.0 / (1.0 + np.exp(-z)))
            inst = Instance(len(instances) + 1, cls, score, m)
            instances.append(inst)
            with_src.append((inst, src))
        prob = _prob_map(dims, cfg.n_classes, with_src, gts, deg, rng) if cfg.prob_maps else None
        frames.append(Frame(t, dims, instances, prob))
    seq = Sequence(cfg.name, frames, gt_frames)
    return seq, gt_frames


def oracle_iou(pred: Frame, gt: GroundTruthFrame) -> list[tuple[int, int | None, float]]:
    """Per-prediction ``(local_id, gt_track_id, iou)`` via plain pixel sets.

    Same matching rule as the evaluation: highest IoU among same-class
    objects, smaller track id on ties.
    """
    gts = [(g.track_id, g.class_label, naive.pixel_set(g.mask)) for g in gt.instances]
    out = []
    for inst in sorted(pred.instances, key=lambda i: i.local_id):
        p = naive.pixel_set(inst.mask)
        best_id, best = None, 0.0
        for tid, cls, gs in sorted(gts, key=lambda x: x[0]):
            if cls != inst.class_label:
                continue
            v = naive.overlap(p, gs)
            if v > best:
                best_id, best = tid, v
        out.append((inst.local_id, best_id, best))
    return out


# --- ready-made layouts ------------------------------------------------------


def grid_config(
    rows: int = 2,
    cols: int = 5,
    spacing: float = 330.0,
    size: float = 40.0,
    n_frames: int = 50,
    drift: tuple[float, float] = (1.0, 2.0),
    velocity_spread: float = 0.5,
    flicker: dict | None = None,
    degradation: Degradation | None = None,
    seed: int = 0,
    name: str = "grid",
) -> SynthConfig:
    """Objects on a regular grid sharing a common drift.

    Each object's velocity adds a seeded offset of at most
    ``velocity_spread`` pixels per frame to ``drift``. ``flicker`` maps an
    object index to the frames in which its prediction is dropped.
    """
    rng = np.random.default_rng(seed)
    flicker = flicker or {}
    objs = []
    span = n_frames - 1
    vmax = np.abs(np.asarray(drift)) + velocity_spread
    margin = size / 2 + 2 + vmax * span
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            vel = np.asarray(drift, dtype=float) + rng.uniform(-velocity_spread, velocity_spread, size=2)
            start = (margin[0] + r * spacing, margin[1] + c * spacing)
            if drift[0] < 0:
                start = (start[0] + vmax[0] * span, start[1])
            if drift[1] < 0:
                start = (start[0], start[1] + vmax[1] * span)
            objs.append(ObjectSpec(
                size=(size, size),
                start=start,
                velocity=(float(vel[0]), float(vel[1])),
                shape="rect" if k % 2 == 0 else "ellipse",
                class_label=1 + k % 2,
                flicker=tuple(flicker.get(k, ())),
            ))
    height = int(np.ceil(2 * margin[0] + (rows - 1) * spacing))
    width = int(np.ceil(2 * margin[1] + (cols - 1) * spacing))
    return SynthConfig(height, width, n_frames, objs, prob_maps=False,
                       degradation=degradation or Degradation(), seed=seed, name=name)
